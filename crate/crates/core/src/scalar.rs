//! Scalar abstraction shared by every estimator in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::str::FromStr;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real floating-point type the estimators are generic over.
///
/// Implemented for `f32` and `f64`. Linear algebra goes through
/// [`RealField`]; conversions to and from `f64` go through `num-traits`.
pub trait Scalar:
    RealField
    + Copy
    + FromPrimitive
    + ToPrimitive
    + Display
    + Debug
    + LowerExp
    + FromStr
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Panics only for values the type cannot
    /// represent at all, which never happens for `f32`/`f64`.
    #[inline]
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    #[inline]
    fn finite(self) -> bool {
        self.as_f64().is_finite()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

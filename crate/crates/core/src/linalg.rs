//! Small dense helpers on top of nalgebra: rank-one gain updates,
//! symmetrization and block assembly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Averages a square matrix with its transpose in place.
pub fn symmetrize<T: Scalar>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// `info += weight * phi phi^T`.
pub fn add_outer<T: Scalar>(info: &mut DMatrix<T>, phi: &DVector<T>, weight: T) {
    info.ger(weight, phi, phi, T::one());
}

/// Sherman-Morrison downdate of a symmetric gain matrix:
/// `sigma - (sigma phi)(sigma phi)^T / (offset + phi^T sigma phi)`.
///
/// This is the inverse of `sigma^{-1} + phi phi^T / offset`.
pub fn rank_one_inverse_update<T: Scalar>(
    sigma: &mut DMatrix<T>,
    phi: &DVector<T>,
    offset: T,
) -> Result<()> {
    let sphi = &*sigma * phi;
    let denom = offset + phi.dot(&sphi);
    if denom <= T::zero() {
        return Err(Error::DivisionByZero("rank-one inverse update"));
    }
    sigma.ger(-T::one() / denom, &sphi, &sphi, T::one());
    Ok(())
}

pub fn all_finite<T: Scalar>(values: impl IntoIterator<Item = T>) -> bool {
    values.into_iter().all(Scalar::finite)
}

pub fn ensure_finite_matrix<T: Scalar>(m: &DMatrix<T>, context: &'static str) -> Result<()> {
    if all_finite(m.iter().copied()) {
        Ok(())
    } else {
        Err(Error::NumericOverflow(context))
    }
}

pub fn ensure_finite_vector<T: Scalar>(v: &DVector<T>, context: &'static str) -> Result<()> {
    if all_finite(v.iter().copied()) {
        Ok(())
    } else {
        Err(Error::NumericOverflow(context))
    }
}

/// Block-diagonal matrix from square blocks.
pub fn block_diag<T: Scalar>(blocks: &[&DMatrix<T>]) -> DMatrix<T> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut offset = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((offset, offset), (k, k)).copy_from(b);
        offset += k;
    }
    out
}

/// Ratio of extreme eigenvalues of a symmetric matrix; infinite when the
/// smallest eigenvalue is not positive.
pub fn spd_condition<T: Scalar>(m: &DMatrix<T>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        let v = v.as_f64();
        (lo.min(v), hi.max(v))
    });
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn min_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(T::max_value().expect("bounded scalar"), |a, b| a.min(b))
}

/// Relative Frobenius distance `||a - b|| / max(||b||, 1)`.
pub fn rel_frobenius<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    let diff = (a - b).norm();
    diff / b.norm().max(T::one())
}

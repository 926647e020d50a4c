//! MISO FIR systems, regressor windows and output simulation.
//!
//! Every module `G_i` is a finite polynomial in the delay operator with
//! coefficients stored newest-tap first (`b_0, b_1, ...`). The regressor
//! window of input `i` holds `(u_i(t), u_i(t-1), ..., u_i(t-n_i+1))` in the
//! same order, so predictions are plain positional dot products. Samples
//! before `t = 0` are zero.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One FIR module `B_i(q) = b_0 + b_1 q^-1 + ... + b_{n_i-1} q^{-n_i+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirModule<T> {
    coeffs: Vec<T>,
}

impl<T: Scalar> FirModule<T> {
    pub fn new(coeffs: Vec<T>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Parameter("FIR module needs at least one coefficient".into()));
        }
        if !coeffs.iter().all(|c| c.finite()) {
            return Err(Error::Parameter("FIR coefficients must be finite".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }
}

/// `y(t) = sum_i G_i(q) u_i(t) + v(t)` with white output noise of standard
/// deviation `noise_std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemFile<T>", into = "SystemFile<T>")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct MisoSystem<T: Scalar> {
    modules: Vec<FirModule<T>>,
    noise_std: T,
}

/// On-disk layout: `{"modules": [[b0, b1, ...], ...], "noise_std": s}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
struct SystemFile<T> {
    modules: Vec<Vec<T>>,
    noise_std: T,
}

impl<T: Scalar> TryFrom<SystemFile<T>> for MisoSystem<T> {
    type Error = Error;

    fn try_from(file: SystemFile<T>) -> Result<Self> {
        let modules = file
            .modules
            .into_iter()
            .map(FirModule::new)
            .collect::<Result<Vec<_>>>()?;
        MisoSystem::new(modules, file.noise_std)
    }
}

impl<T: Scalar> From<MisoSystem<T>> for SystemFile<T> {
    fn from(sys: MisoSystem<T>) -> Self {
        SystemFile {
            modules: sys.modules.into_iter().map(|m| m.coeffs).collect(),
            noise_std: sys.noise_std,
        }
    }
}

impl<T: Scalar> MisoSystem<T> {
    pub fn new(modules: Vec<FirModule<T>>, noise_std: T) -> Result<Self> {
        if modules.is_empty() {
            return Err(Error::Parameter("MISO system needs at least one module".into()));
        }
        if !noise_std.finite() || noise_std < T::zero() {
            return Err(Error::Parameter(format!(
                "noise standard deviation must be finite and >= 0, got {noise_std}"
            )));
        }
        Ok(Self { modules, noise_std })
    }

    /// Convenience constructor from raw coefficient lists.
    pub fn from_coeffs(coeffs: Vec<Vec<T>>, noise_std: T) -> Result<Self> {
        let modules = coeffs
            .into_iter()
            .map(FirModule::new)
            .collect::<Result<Vec<_>>>()?;
        Self::new(modules, noise_std)
    }

    pub fn modules(&self) -> &[FirModule<T>] {
        &self.modules
    }

    /// Number of inputs `m`.
    pub fn inputs(&self) -> usize {
        self.modules.len()
    }

    pub fn orders(&self) -> Vec<usize> {
        self.modules.iter().map(FirModule::order).collect()
    }

    /// Total parameter count `n = sum n_i`.
    pub fn parameter_count(&self) -> usize {
        self.modules.iter().map(FirModule::order).sum()
    }

    pub fn noise_std(&self) -> T {
        self.noise_std
    }

    pub fn with_noise_std(mut self, noise_std: T) -> Result<Self> {
        if !noise_std.finite() || noise_std < T::zero() {
            return Err(Error::Parameter(format!(
                "noise standard deviation must be finite and >= 0, got {noise_std}"
            )));
        }
        self.noise_std = noise_std;
        Ok(self)
    }

    /// Stacked true parameter vector `theta^0 = col(theta_1^0, ..., theta_m^0)`.
    pub fn theta(&self) -> DVector<T> {
        DVector::from_iterator(
            self.parameter_count(),
            self.modules.iter().flat_map(|m| m.coeffs.iter().copied()),
        )
    }

    pub fn theta_parts(&self) -> Vec<DVector<T>> {
        self.modules
            .iter()
            .map(|m| DVector::from_column_slice(&m.coeffs))
            .collect()
    }

    fn check_aligned(&self, bank: &RegressorBank<T>) -> Result<()> {
        if bank.windows.len() != self.modules.len() {
            return Err(Error::Dimension {
                context: "regressor bank module count",
                expected: self.modules.len(),
                found: bank.windows.len(),
            });
        }
        for (module, window) in self.modules.iter().zip(&bank.windows) {
            if module.order() != window.len() {
                return Err(Error::Dimension {
                    context: "regressor window length",
                    expected: module.order(),
                    found: window.len(),
                });
            }
        }
        Ok(())
    }

    /// `sum_i phi_i(t)^T theta_i^0`.
    pub fn noise_free_output(&self, bank: &RegressorBank<T>) -> Result<T> {
        self.check_aligned(bank)?;
        Ok(self
            .modules
            .iter()
            .zip(&bank.windows)
            .map(|(m, w)| dot(&m.coeffs, w))
            .fold(T::zero(), |acc, x| acc + x))
    }

    /// Noise-free output plus an externally drawn noise sample `v(t)`.
    pub fn noisy_output(&self, bank: &RegressorBank<T>, noise_sample: T) -> Result<T> {
        Ok(self.noise_free_output(bank)? + noise_sample)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("system serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parameter(format!("system file: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json();
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Sliding input windows `phi_i(t)`, one per module.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorBank<T> {
    windows: Vec<Vec<T>>,
}

impl<T: Scalar> RegressorBank<T> {
    /// All-zero windows of the given orders.
    pub fn new(orders: &[usize]) -> Result<Self> {
        if orders.is_empty() || orders.contains(&0) {
            return Err(Error::Parameter(
                "regressor bank needs at least one window and every order >= 1".into(),
            ));
        }
        Ok(Self {
            windows: orders.iter().map(|&n| vec![T::zero(); n]).collect(),
        })
    }

    pub fn for_system(system: &MisoSystem<T>) -> Self {
        Self::new(&system.orders()).expect("system orders are valid")
    }

    pub fn inputs(&self) -> usize {
        self.windows.len()
    }

    pub fn window(&self, i: usize) -> &[T] {
        &self.windows[i]
    }

    pub fn windows(&self) -> &[Vec<T>] {
        &self.windows
    }

    /// Shifts every window by one sample and inserts `u[i]` at the front of
    /// window `i`.
    pub fn push_inputs(&mut self, u: &[T]) -> Result<()> {
        if u.len() != self.windows.len() {
            return Err(Error::Dimension {
                context: "input sample",
                expected: self.windows.len(),
                found: u.len(),
            });
        }
        if !u.iter().all(|x| x.finite()) {
            return Err(Error::Parameter("input samples must be finite".into()));
        }
        for (window, &sample) in self.windows.iter_mut().zip(u) {
            window.rotate_right(1);
            window[0] = sample;
        }
        Ok(())
    }

    /// Value-returning form of [`push_inputs`](Self::push_inputs).
    pub fn pushed(mut self, u: &[T]) -> Result<Self> {
        self.push_inputs(u)?;
        Ok(self)
    }

    /// Local regressor `phi_i(t)` as a column vector.
    pub fn phi(&self, i: usize) -> DVector<T> {
        DVector::from_column_slice(&self.windows[i])
    }

    /// Stacked regressor `phi(t) = col(phi_1(t), ..., phi_m(t))`.
    pub fn stacked(&self) -> DVector<T> {
        let n = self.windows.iter().map(Vec::len).sum();
        DVector::from_iterator(n, self.windows.iter().flatten().copied())
    }
}

/// Output prediction `sum_i phi_i^T theta_i` for a partitioned estimate.
pub fn predict<T: Scalar>(theta_parts: &[DVector<T>], bank: &RegressorBank<T>) -> Result<T> {
    if theta_parts.len() != bank.windows.len() {
        return Err(Error::Dimension {
            context: "parameter partition count",
            expected: bank.windows.len(),
            found: theta_parts.len(),
        });
    }
    let mut acc = T::zero();
    for (theta, window) in theta_parts.iter().zip(&bank.windows) {
        if theta.len() != window.len() {
            return Err(Error::Dimension {
                context: "parameter block length",
                expected: window.len(),
                found: theta.len(),
            });
        }
        acc += dot(theta.as_slice(), window);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sys(coeffs: Vec<Vec<f64>>) -> MisoSystem<f64> {
        MisoSystem::from_coeffs(coeffs, 0.0).unwrap()
    }

    #[test]
    fn push_shifts_with_zero_prewindow() {
        let mut bank = RegressorBank::<f64>::new(&[3]).unwrap();
        assert_eq!(bank.window(0), &[0.0, 0.0, 0.0]);
        bank.push_inputs(&[1.0]).unwrap();
        bank.push_inputs(&[2.0]).unwrap();
        assert_eq!(bank.window(0), &[2.0, 1.0, 0.0]);
    }

    #[test]
    fn order_one_window_holds_latest_sample() {
        let bank = RegressorBank::<f64>::new(&[1]).unwrap().pushed(&[5.0]).unwrap();
        assert_eq!(bank.window(0), &[5.0]);
    }

    #[test]
    fn three_pushes_into_order_two() {
        // hand-evaluated shift register: (1,0) -> (2,1) -> (3,2)
        let mut bank = RegressorBank::<f64>::new(&[2, 1]).unwrap();
        for u in [[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]] {
            bank.push_inputs(&u).unwrap();
        }
        assert_eq!(bank.window(0), &[3.0, 2.0]);
        assert_eq!(bank.window(1), &[30.0]);
        assert_eq!(bank.stacked().as_slice(), &[3.0, 2.0, 30.0]);
    }

    #[test]
    fn push_rejects_wrong_length() {
        let mut bank = RegressorBank::<f64>::new(&[2, 2]).unwrap();
        assert!(matches!(
            bank.push_inputs(&[1.0]),
            Err(Error::Dimension { expected: 2, found: 1, .. })
        ));
    }

    #[test]
    fn noise_free_output_two_term() {
        let s = sys(vec![vec![1.0], vec![2.0]]);
        let bank = RegressorBank::new(&[1, 1]).unwrap().pushed(&[3.0, 4.0]).unwrap();
        assert_eq!(s.noise_free_output(&bank).unwrap(), 11.0);
        assert_eq!(s.noisy_output(&bank, 0.05).unwrap(), 11.05);
    }

    #[test]
    fn zero_windows_give_zero_output() {
        let s = sys(vec![vec![1.0, 2.0], vec![3.0]]);
        let bank = RegressorBank::for_system(&s);
        assert_eq!(s.noise_free_output(&bank).unwrap(), 0.0);
        assert_eq!(s.noisy_output(&bank, -0.1).unwrap(), -0.1);
    }

    #[test]
    fn symmetric_cancellation() {
        let s = sys(vec![vec![1.0, -1.0]]);
        let bank = RegressorBank::new(&[2]).unwrap().pushed(&[2.0]).unwrap().pushed(&[2.0]).unwrap();
        assert_eq!(s.noise_free_output(&bank).unwrap(), 0.0);
    }

    #[test]
    fn misaligned_bank_is_rejected() {
        let s = sys(vec![vec![1.0, 2.0]]);
        let bank = RegressorBank::new(&[3]).unwrap();
        assert!(matches!(s.noise_free_output(&bank), Err(Error::Dimension { .. })));
        let bank = RegressorBank::new(&[2, 1]).unwrap();
        assert!(matches!(s.noise_free_output(&bank), Err(Error::Dimension { .. })));
    }

    #[test]
    fn predict_examples() {
        let bank = RegressorBank::<f64>::new(&[1]).unwrap().pushed(&[4.0]).unwrap();
        assert_eq!(predict(&[DVector::from_vec(vec![0.5])], &bank).unwrap(), 2.0);
        assert_eq!(predict(&[DVector::zeros(1)], &bank).unwrap(), 0.0);
        assert!(predict(&[DVector::zeros(2)], &bank).is_err());
    }

    #[test]
    fn invalid_modules_rejected() {
        assert!(FirModule::<f64>::new(vec![]).is_err());
        assert!(FirModule::new(vec![f64::NAN]).is_err());
        assert!(MisoSystem::<f64>::new(vec![], 0.0).is_err());
        assert!(MisoSystem::from_coeffs(vec![vec![1.0]], -1.0).is_err());
    }

    #[test]
    fn system_file_layout() {
        let s = MisoSystem::from_coeffs(vec![vec![1.5, -2.0], vec![0.25]], 0.1).unwrap();
        let json = s.to_json();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["modules"][0][1], -2.0);
        assert_eq!(value["noise_std"], 0.1);
        assert_eq!(MisoSystem::<f64>::from_json(&json).unwrap(), s);
        assert!(MisoSystem::<f64>::from_json(r#"{"modules": [[]], "noise_std": 0.1}"#).is_err());
        assert!(MisoSystem::<f64>::from_json(r#"{"modules": [[1]], "noise_std": 0.1, "x": 1}"#).is_err());
    }

    #[test]
    fn generic_over_f32() {
        let s = MisoSystem::<f32>::from_coeffs(vec![vec![1.0], vec![2.0]], 0.0).unwrap();
        let bank = RegressorBank::new(&[1, 1]).unwrap().pushed(&[3.0f32, 4.0]).unwrap();
        assert_eq!(s.noise_free_output(&bank).unwrap(), 11.0f32);
    }

    proptest! {
        #[test]
        fn shift_matches_indexed_reconstruction(
            orders in proptest::collection::vec(1usize..6, 1..4),
            steps in 0usize..12,
            seed in any::<u64>(),
        ) {
            let m = orders.len();
            let signal: Vec<Vec<f64>> = (0..steps)
                .map(|t| (0..m).map(|i| ((seed as f64) * 1e-9 + (t * 7 + i * 3) as f64).sin()).collect())
                .collect();
            let mut bank = RegressorBank::new(&orders).unwrap();
            for u in &signal {
                bank.push_inputs(u).unwrap();
            }
            if steps > 0 {
                let t = steps as isize - 1;
                for (i, &n) in orders.iter().enumerate() {
                    let expected: Vec<f64> = (0..n as isize)
                        .map(|d| if t - d >= 0 { signal[(t - d) as usize][i] } else { 0.0 })
                        .collect();
                    prop_assert_eq!(bank.window(i), expected.as_slice());
                }
            } else {
                prop_assert!(bank.stacked().iter().all(|&x| x == 0.0));
            }
        }

        #[test]
        fn prediction_is_linear(
            a in -3.0f64..3.0, b in -3.0f64..3.0,
            th in proptest::collection::vec(-2.0f64..2.0, 4),
            tp in proptest::collection::vec(-2.0f64..2.0, 4),
            u in proptest::collection::vec(-2.0f64..2.0, 6),
        ) {
            let orders = [3usize, 1];
            let mut bank = RegressorBank::new(&orders).unwrap();
            for pair in u.chunks(2) {
                bank.push_inputs(pair).unwrap();
            }
            let split = |v: &[f64]| vec![DVector::from_column_slice(&v[..3]), DVector::from_column_slice(&v[3..])];
            let mix: Vec<f64> = th.iter().zip(&tp).map(|(x, y)| a * x + b * y).collect();
            let lhs = predict(&split(&mix), &bank).unwrap();
            let rhs = a * predict(&split(&th), &bank).unwrap() + b * predict(&split(&tp), &bank).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn zero_noise_output_is_bit_exact(
            coeffs in proptest::collection::vec(-5.0f64..5.0, 1..6),
            u in proptest::collection::vec(-5.0f64..5.0, 1..8),
        ) {
            let s = MisoSystem::from_coeffs(vec![coeffs], 0.0).unwrap();
            let mut bank = RegressorBank::for_system(&s);
            for x in u {
                bank.push_inputs(&[x]).unwrap();
                prop_assert_eq!(
                    s.noisy_output(&bank, 0.0).unwrap().to_bits(),
                    s.noise_free_output(&bank).unwrap().to_bits()
                );
                let truth = s.theta_parts();
                prop_assert_eq!(predict(&truth, &bank).unwrap(), s.noise_free_output(&bank).unwrap());
            }
        }
    }
}

//! Central least-squares estimators: the batch solution and the recursive
//! update in both its noise-variance form and the `gamma`-weighted
//! information form used as the centralized baseline.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{
    add_outer, ensure_finite_matrix, ensure_finite_vector, rank_one_inverse_update, spd_condition,
    symmetrize,
};
use crate::scalar::Scalar;

/// Largest acceptable condition estimate of `Phi^T Phi`.
pub const SINGULARITY_LIMIT: f64 = 1e12;

/// Batch least-squares estimate `(Phi^T Phi)^{-1} Phi^T y`.
pub fn batch_lse<T: Scalar>(data: &DMatrix<T>, outputs: &DVector<T>) -> Result<DVector<T>> {
    let normal = normal_matrix(data, outputs.len())?;
    let rhs = data.transpose() * outputs;
    let chol = normal.cholesky().ok_or(Error::Singular {
        reason: "normal matrix not positive definite",
        condition: f64::INFINITY,
        limit: SINGULARITY_LIMIT,
    })?;
    Ok(chol.solve(&rhs))
}

/// Batch covariance `sigma^2 (Phi^T Phi)^{-1}`, used only to seed the
/// recursion.
pub fn batch_covariance<T: Scalar>(data: &DMatrix<T>, noise_var: T) -> Result<DMatrix<T>> {
    let normal = normal_matrix(data, data.nrows())?;
    let inv = normal.cholesky().ok_or(Error::Singular {
        reason: "normal matrix not positive definite",
        condition: f64::INFINITY,
        limit: SINGULARITY_LIMIT,
    })?;
    let mut cov = inv.inverse() * noise_var;
    symmetrize(&mut cov);
    Ok(cov)
}

fn normal_matrix<T: Scalar>(data: &DMatrix<T>, outputs: usize) -> Result<DMatrix<T>> {
    if data.nrows() != outputs {
        return Err(Error::Dimension {
            context: "batch output vector",
            expected: data.nrows(),
            found: outputs,
        });
    }
    if data.ncols() == 0 {
        return Err(Error::Parameter("data matrix has no columns".into()));
    }
    if data.nrows() < data.ncols() {
        return Err(Error::Singular {
            reason: "fewer samples than parameters (rank deficient)",
            condition: f64::INFINITY,
            limit: SINGULARITY_LIMIT,
        });
    }
    let mut normal = data.transpose() * data;
    symmetrize(&mut normal);
    let condition = spd_condition(&normal);
    if !(condition <= SINGULARITY_LIMIT) {
        return Err(Error::Singular {
            reason: "normal matrix rank deficient or ill-conditioned",
            condition,
            limit: SINGULARITY_LIMIT,
        });
    }
    Ok(normal)
}

/// How the information matrix absorbs a new regressor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InfoWeight<T> {
    /// `Sigma^{-1} += phi phi^T / sigma^2`, the textbook recursive LSE.
    NoiseVariance,
    /// `Sigma^{-1} += phi phi^T / gamma^2`.
    Gamma(T),
}

/// Per-update quantities reported alongside the new state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentralStep<T> {
    /// `alpha = 1 / (sigma^2 + phi^T Sigma phi)`.
    pub alpha: T,
    /// Prediction error `y - phi^T theta_hat` before the update.
    pub prediction_error: T,
}

/// Central estimate with its gain matrix `Sigma` and the inverse
/// `Sigma^{-1}`, both carried through rank-one updates.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralState<T: Scalar> {
    theta_hat: DVector<T>,
    sigma: DMatrix<T>,
    info: DMatrix<T>,
    noise_var: T,
}

impl<T: Scalar> CentralState<T> {
    /// `theta_hat = 0`, `Sigma = c I`.
    pub fn from_scratch(n: usize, c: T, noise_var: T) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("parameter count must be >= 1".into()));
        }
        if !(c > T::zero()) || !c.finite() {
            return Err(Error::Parameter(format!("initial gain scale c must be > 0, got {c}")));
        }
        check_noise_var(noise_var)?;
        Ok(Self {
            theta_hat: DVector::zeros(n),
            sigma: DMatrix::identity(n, n) * c,
            info: DMatrix::identity(n, n) * (T::one() / c),
            noise_var,
        })
    }

    /// Seeds the recursion with the batch estimate and covariance of a data
    /// prefix.
    pub fn from_batch(data: &DMatrix<T>, outputs: &DVector<T>, noise_var: T) -> Result<Self> {
        if !(noise_var > T::zero()) {
            return Err(Error::Parameter(
                "batch seeding needs a positive noise variance".into(),
            ));
        }
        let theta_hat = batch_lse(data, outputs)?;
        let sigma = batch_covariance(data, noise_var)?;
        let mut info = data.transpose() * data * (T::one() / noise_var);
        symmetrize(&mut info);
        Ok(Self {
            theta_hat,
            sigma,
            info,
            noise_var,
        })
    }

    /// Assembles a state from explicit parts; `sigma` must be the inverse of
    /// `info`.
    pub fn from_parts(
        theta_hat: DVector<T>,
        sigma: DMatrix<T>,
        info: DMatrix<T>,
        noise_var: T,
    ) -> Result<Self> {
        let n = theta_hat.len();
        for (m, name) in [(&sigma, "gain matrix"), (&info, "information matrix")] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Dimension {
                    context: name,
                    expected: n,
                    found: m.nrows(),
                });
            }
        }
        check_noise_var(noise_var)?;
        Ok(Self {
            theta_hat,
            sigma,
            info,
            noise_var,
        })
    }

    pub fn theta_hat(&self) -> &DVector<T> {
        &self.theta_hat
    }

    pub fn sigma(&self) -> &DMatrix<T> {
        &self.sigma
    }

    pub fn info(&self) -> &DMatrix<T> {
        &self.info
    }

    pub fn noise_var(&self) -> T {
        self.noise_var
    }

    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    /// `alpha = 1 / (sigma^2 + phi^T Sigma phi)`.
    pub fn alpha(&self, phi: &DVector<T>) -> Result<T> {
        let denom = self.noise_var + phi.dot(&(&self.sigma * phi));
        if denom <= T::zero() {
            return Err(Error::DivisionByZero("central gain alpha"));
        }
        Ok(T::one() / denom)
    }

    /// In-place recursive update with the given information weighting.
    pub fn apply(&mut self, phi: &DVector<T>, y: T, weight: InfoWeight<T>) -> Result<CentralStep<T>> {
        let n = self.dim();
        if phi.len() != n {
            return Err(Error::Dimension {
                context: "central regressor",
                expected: n,
                found: phi.len(),
            });
        }
        if !phi.iter().all(|x| x.finite()) || !y.finite() {
            return Err(Error::NumericOverflow("central update input"));
        }
        let info_scale = match weight {
            InfoWeight::NoiseVariance => {
                if !(self.noise_var > T::zero()) {
                    return Err(Error::Parameter(
                        "noise-variance weighting needs sigma^2 > 0".into(),
                    ));
                }
                self.noise_var
            }
            InfoWeight::Gamma(gamma) => {
                if !(gamma > T::zero()) || !gamma.finite() {
                    return Err(Error::Parameter(format!("gamma must be > 0, got {gamma}")));
                }
                gamma * gamma
            }
        };

        let sphi = &self.sigma * phi;
        let quad = phi.dot(&sphi);
        let denom = self.noise_var + quad;
        if denom <= T::zero() {
            return Err(Error::DivisionByZero("central gain alpha"));
        }
        let alpha = T::one() / denom;
        let prediction_error = y - phi.dot(&self.theta_hat);

        self.theta_hat.axpy(alpha * prediction_error, &sphi, T::one());

        match weight {
            // (I - alpha Sigma phi phi^T) Sigma
            InfoWeight::NoiseVariance => self.sigma.ger(-alpha, &sphi, &sphi, T::one()),
            InfoWeight::Gamma(_) => rank_one_inverse_update(&mut self.sigma, phi, info_scale)?,
        }
        symmetrize(&mut self.sigma);
        add_outer(&mut self.info, phi, T::one() / info_scale);
        symmetrize(&mut self.info);

        ensure_finite_vector(&self.theta_hat, "central estimate")?;
        ensure_finite_matrix(&self.sigma, "central gain matrix")?;
        ensure_finite_matrix(&self.info, "central information matrix")?;
        Ok(CentralStep {
            alpha,
            prediction_error,
        })
    }

    /// Recursive LSE step; returns the updated state.
    pub fn rls_update(&self, phi: &DVector<T>, y: T) -> Result<Self> {
        let mut next = self.clone();
        next.apply(phi, y, InfoWeight::NoiseVariance)?;
        Ok(next)
    }

    /// Recursive step with `gamma^{-2}` information weighting; `alpha` still
    /// uses `sigma^2`.
    pub fn rls_update_gamma(&self, phi: &DVector<T>, y: T, gamma: T) -> Result<Self> {
        let mut next = self.clone();
        next.apply(phi, y, InfoWeight::Gamma(gamma))?;
        Ok(next)
    }
}

fn check_noise_var<T: Scalar>(noise_var: T) -> Result<()> {
    if noise_var < T::zero() || !noise_var.finite() {
        return Err(Error::Parameter(format!(
            "noise variance must be finite and >= 0, got {noise_var}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_frobenius;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn batch_scalar_fit() {
        let phi = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let est = batch_lse(&phi, &v(&[2.0, 4.0])).unwrap();
        assert_relative_eq!(est[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn batch_identity_returns_outputs() {
        let y = v(&[0.3, -1.2, 7.0]);
        let est = batch_lse(&DMatrix::identity(3, 3), &y).unwrap();
        assert_relative_eq!(est, y, epsilon = 1e-14);
    }

    #[test]
    fn batch_rejects_rank_deficiency() {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let err = batch_lse(&phi, &v(&[1.0, 2.0, 3.0])).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }), "{err}");
        let short = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(matches!(batch_lse(&short, &v(&[1.0])), Err(Error::Singular { .. })));
        assert!(matches!(batch_lse(&short, &v(&[1.0, 2.0])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn scalar_rls_step_by_hand() {
        // alpha = 1/(1 + 1) = 0.5; theta = 0 + 0.5 * 1 * 1 * (1 - 0); Sigma = (1 - 0.5) * 1
        let s = CentralState::from_scratch(1, 1.0, 1.0).unwrap();
        assert_eq!(s.alpha(&v(&[1.0])).unwrap(), 0.5);
        let next = s.rls_update(&v(&[1.0]), 1.0).unwrap();
        assert_eq!(next.theta_hat()[0], 0.5);
        assert_eq!(next.sigma()[(0, 0)], 0.5);
        assert_eq!(next.info()[(0, 0)], 2.0);
    }

    #[test]
    fn zero_regressor_changes_nothing() {
        let s = CentralState::from_scratch(3, 2.0, 0.5).unwrap();
        let mut s = s.rls_update(&v(&[1.0, 0.5, -1.0]), 0.7).unwrap();
        s.theta_hat[1] = 0.25;
        let next = s.rls_update(&DVector::zeros(3), 3.0).unwrap();
        assert_eq!(next.theta_hat(), s.theta_hat());
        assert_eq!(next.sigma(), s.sigma());
        let next = s.rls_update_gamma(&DVector::zeros(3), 3.0, 10.0).unwrap();
        assert_eq!(next.sigma(), s.sigma());
    }

    #[test]
    fn gamma_information_step() {
        let s = CentralState::from_scratch(1, 1.0, 0.01).unwrap();
        let next = s.rls_update_gamma(&v(&[1.0]), 0.0, 10.0).unwrap();
        assert_relative_eq!(next.info()[(0, 0)], 1.01, epsilon = 1e-15);
        assert_relative_eq!(next.sigma()[(0, 0)], 1.0 / 1.01, epsilon = 1e-15);
        assert!(matches!(
            s.rls_update_gamma(&v(&[1.0]), 0.0, 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(s.rls_update_gamma(&v(&[1.0]), 0.0, -1.0).is_err());
    }

    #[test]
    fn gamma_equal_sigma_matches_textbook_update() {
        let sigma = 0.3;
        let mut a = CentralState::from_scratch(2, 5.0, sigma * sigma).unwrap();
        let mut b = a.clone();
        let data = [([1.0, -0.5], 0.2), ([0.3, 2.0], -1.0), ([-1.5, 0.7], 0.4)];
        for (phi, y) in data {
            a = a.rls_update(&v(&phi), y).unwrap();
            b = b.rls_update_gamma(&v(&phi), y, sigma).unwrap();
        }
        assert_relative_eq!(a.theta_hat(), b.theta_hat(), max_relative = 1e-12);
        assert!(rel_frobenius(a.sigma(), b.sigma()) < 1e-12);
        assert!(rel_frobenius(a.info(), b.info()) < 1e-12);
    }

    #[test]
    fn from_scratch_examples() {
        let s = CentralState::from_scratch(2, 100.0, 0.01).unwrap();
        assert_eq!(s.theta_hat().as_slice(), &[0.0, 0.0]);
        assert_eq!(s.sigma(), &(DMatrix::identity(2, 2) * 100.0));
        assert_eq!(s.info(), &(DMatrix::identity(2, 2) * 0.01));
        let s = CentralState::from_scratch(1, 1.0, 1.0).unwrap();
        assert_eq!(s.sigma()[(0, 0)], 1.0);
        assert!(CentralState::<f64>::from_scratch(2, 0.0, 1.0).is_err());
        assert!(CentralState::<f64>::from_scratch(2, -1.0, 1.0).is_err());
        assert!(CentralState::<f64>::from_scratch(0, 1.0, 1.0).is_err());
    }

    #[test]
    fn noise_variance_form_needs_positive_variance() {
        let s = CentralState::from_scratch(1, 1.0, 0.0).unwrap();
        assert!(matches!(s.rls_update(&v(&[1.0]), 1.0), Err(Error::Parameter(_))));
        // gamma form tolerates sigma^2 = 0
        assert!(s.rls_update_gamma(&v(&[1.0]), 1.0, 100.0).is_ok());
    }

    #[test]
    fn overflow_is_reported() {
        let s = CentralState::from_scratch(1, 1.0, 1.0).unwrap();
        let err = s.rls_update(&v(&[1e200]), 1e300).unwrap_err();
        assert!(matches!(err, Error::NumericOverflow(_)), "{err}");
        assert!(matches!(
            s.rls_update(&v(&[f64::NAN]), 1.0),
            Err(Error::NumericOverflow(_))
        ));
    }

    /// Dense ridge solution `(Phi^T Phi + (sigma^2 / c) I)^{-1} Phi^T y`,
    /// which is what the recursion started from `theta = 0, Sigma = cI`
    /// computes exactly.
    fn ridge_oracle(rows: &[Vec<f64>], y: &[f64], ratio: f64) -> Vec<f64> {
        let n = rows[0].len();
        let mut a = vec![vec![0.0; n + 1]; n];
        for (r, &yy) in rows.iter().zip(y) {
            for i in 0..n {
                for j in 0..n {
                    a[i][j] += r[i] * r[j];
                }
                a[i][n] += r[i] * yy;
            }
        }
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += ratio;
        }
        gauss_solve(a)
    }

    fn gauss_solve(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            for r in (col + 1)..n {
                let f = a[r][col] / a[col][col];
                for c in col..=n {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = ((i + 1)..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (a[i][n] - s) / a[i][i];
        }
        x
    }

    proptest! {
        #[test]
        fn from_scratch_recursion_equals_ridge(
            rows in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 3), 4..30),
            noise in proptest::collection::vec(-0.1f64..0.1, 30),
        ) {
            let (c, sigma2) = (10.0, 0.25);
            let truth = [1.0, -2.0, 0.5];
            let y: Vec<f64> = rows.iter().zip(&noise)
                .map(|(r, e)| r.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>() + e)
                .collect();
            let mut s = CentralState::from_scratch(3, c, sigma2).unwrap();
            for (r, &yy) in rows.iter().zip(&y) {
                s.apply(&v(r), yy, InfoWeight::NoiseVariance).unwrap();
            }
            let oracle = ridge_oracle(&rows, &y, sigma2 / c);
            for (a, b) in s.theta_hat().iter().zip(&oracle) {
                prop_assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{a} vs {b}");
            }
        }

        #[test]
        fn covariance_and_information_forms_agree(
            rows in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 4), 1..40),
            gamma in proptest::option::of(0.5f64..50.0),
        ) {
            let mut s = CentralState::from_scratch(4, 3.0, 0.5).unwrap();
            for r in &rows {
                let w = gamma.map_or(InfoWeight::NoiseVariance, InfoWeight::Gamma);
                s.apply(&v(r), 0.3, w).unwrap();
                let inv = s.info().clone().try_inverse().unwrap();
                prop_assert!(rel_frobenius(s.sigma(), &inv) < 1e-8);
                let prod = s.info() * s.sigma();
                prop_assert!(rel_frobenius(&prod, &DMatrix::identity(4, 4)) < 1e-8);
                prop_assert_eq!(s.sigma().transpose(), s.sigma().clone());
                prop_assert!(s.sigma().clone().cholesky().is_some());
            }
        }

        #[test]
        fn noise_free_lyapunov_value_never_increases(
            rows in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 3), 1..40),
        ) {
            let truth = v(&[0.7, -1.1, 2.0]);
            let mut s = CentralState::from_scratch(3, 4.0, 1.0).unwrap();
            let w = |s: &CentralState<f64>| {
                let e = s.theta_hat() - &truth;
                e.dot(&(s.info() * &e))
            };
            let mut prev = w(&s);
            for r in &rows {
                let phi = v(r);
                let y = phi.dot(&truth);
                s.apply(&phi, y, InfoWeight::NoiseVariance).unwrap();
                let cur = w(&s);
                prop_assert!(cur <= prev + 1e-12 * prev.max(1.0));
                prev = cur;
            }
        }
    }
}

//! Lyapunov monitor for the estimation error dynamics.
//!
//! Works in oracle mode: the true parameter vector must be known, so this
//! is a verification instrument for simulated runs. For the central
//! recursion the monitored function is `W_C = e^T Sigma^{-1} e`, for the
//! distributed one `W_B = e^T Sigma_B^{-1} e` with block-diagonal
//! `Sigma_B`. Each step records the direct one-step difference next to the
//! closed-form decrease, and in distributed mode the bound on
//! `sum_i gamma_i^{-2}` under which a decrease is guaranteed.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::central::{CentralState, InfoWeight};
use crate::distributed::NodeState;
use crate::error::{Error, Result};
use crate::linalg::min_eigenvalue;
use crate::scalar::Scalar;

/// Relative tolerance of the orthogonality test `|phi^T e| <= tol ||phi|| ||e||`.
pub const ORTHOGONALITY_TOL: f64 = 1e-12;
/// A one-step difference above this counts as a violation.
pub const VIOLATION_TOL: f64 = 1e-12;
/// Denominators of the gamma bound at or below this make the bound vacuous.
pub const DEGENERATE_BOUND_TOL: f64 = 1e-14;

/// `e^T info e`.
pub fn w_quadratic<T: Scalar>(theta_err: &DVector<T>, info: &DMatrix<T>) -> Result<T> {
    let n = theta_err.len();
    if info.nrows() != n || info.ncols() != n {
        return Err(Error::Dimension {
            context: "Lyapunov weight matrix",
            expected: n,
            found: info.nrows(),
        });
    }
    Ok(theta_err.dot(&(info * theta_err)))
}

/// Closed-form decrease of `W_C` over one noise-free recursive LSE step:
/// `-(e^T phi)^2 / (sigma^2 + phi^T Sigma phi)`.
pub fn delta_w_central_closed<T: Scalar>(
    theta_err: &DVector<T>,
    phi: &DVector<T>,
    sigma_mat: &DMatrix<T>,
    sigma: T,
) -> T {
    let proj = theta_err.dot(phi);
    -(proj * proj) / (sigma * sigma + phi.dot(&(sigma_mat * phi)))
}

/// Decrease of `W_B` with the gain matrix frozen at its pre-step value:
/// `-alpha (e^T phi)^2 (2 - alpha phi^T Sigma_B phi)`.
pub fn overline_delta_w_b<T: Scalar>(
    theta_err_b: &DVector<T>,
    phi: &DVector<T>,
    sigma_b: &DMatrix<T>,
    alpha_b: T,
) -> T {
    overline_from_scalars(theta_err_b.dot(phi), phi.dot(&(sigma_b * phi)), alpha_b)
}

fn overline_from_scalars<T: Scalar>(proj: T, quad: T, alpha: T) -> T {
    -alpha * proj * proj * (T::lit(2.0) - alpha * quad)
}

/// Noise-free error propagation `F = I - alpha Sigma_B phi phi^T`.
pub fn propagation_matrix<T: Scalar>(alpha_b: T, sigma_b: &DMatrix<T>, phi: &DVector<T>) -> DMatrix<T> {
    let n = phi.len();
    let sphi = sigma_b * phi;
    let mut f = DMatrix::identity(n, n);
    f.ger(-alpha_b, &sphi, phi, T::one());
    f
}

/// Right-hand side of the gamma sufficiency condition, or the signal that
/// it is vacuous.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaBound<T> {
    /// `sum_i gamma_i^{-2}` must stay strictly below this value.
    Finite(T),
    /// Zero decrease or vanishing denominator: nothing can be certified.
    Degenerate,
}

impl<T: Scalar> GammaBound<T> {
    pub fn satisfied_by(&self, gamma_sum: T) -> bool {
        matches!(self, GammaBound::Finite(b) if gamma_sum < *b)
    }

    pub fn value(&self) -> Option<T> {
        match *self {
            GammaBound::Finite(b) => Some(b),
            GammaBound::Degenerate => None,
        }
    }
}

/// `|overline_dw| / (e^T F^T phi_B F e)`.
pub fn gamma_sufficiency_bound<T: Scalar>(
    theta_err_b: &DVector<T>,
    f_matrix: &DMatrix<T>,
    phi_b: &DMatrix<T>,
    overline_dw: T,
) -> GammaBound<T> {
    let fe = f_matrix * theta_err_b;
    bound_from_parts(fe.dot(&(phi_b * &fe)), overline_dw)
}

fn bound_from_parts<T: Scalar>(denominator: T, overline_dw: T) -> GammaBound<T> {
    if !(overline_dw < T::zero()) || denominator <= T::lit(DEGENERATE_BOUND_TOL) {
        GammaBound::Degenerate
    } else {
        GammaBound::Finite(overline_dw.abs() / denominator)
    }
}

/// Smallest constant `gamma` shared by `m` nodes that satisfies a finite
/// bound: `m / gamma^2 < bound`.
pub fn required_gamma<T: Scalar>(bound: &GammaBound<T>, m: usize) -> Option<T> {
    bound
        .value()
        .map(|b| (T::from_usize(m).expect("node count") / b).sqrt())
}

/// `|phi^T e| <= tol ||phi|| ||e||`.
pub fn is_orthogonal<T: Scalar>(phi: &DVector<T>, theta_err: &DVector<T>) -> bool {
    theta_err.dot(phi).abs() <= T::lit(ORTHOGONALITY_TOL) * phi.norm() * theta_err.norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonitorMode {
    Central,
    Distributed,
}

/// One monitored step `k -> k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapRecord<T> {
    pub k: usize,
    /// `W(e(k), k)`.
    pub w: T,
    /// `W(e(k+1), k+1) - W(e(k), k)`.
    pub delta_w: T,
    /// Closed-form decrease; central noise-variance updates only.
    pub delta_w_closed: Option<T>,
    pub overline_delta_w: Option<T>,
    pub gamma_bound: Option<GammaBound<T>>,
    /// `sum_i gamma_i^{-2}`.
    pub gamma_sum: Option<T>,
    pub err_norm_sq: T,
    pub orthogonal: bool,
    pub violation: bool,
}

impl<T: Scalar> LyapRecord<T> {
    /// The gamma condition certifies a strict decrease at this step.
    pub fn certified(&self) -> bool {
        match (self.gamma_bound, self.gamma_sum) {
            (Some(b), Some(s)) => b.satisfied_by(s),
            _ => false,
        }
    }
}

/// Monitor record for one central step from `pre` to `post`.
pub fn record_central<T: Scalar>(
    k: usize,
    theta0: &DVector<T>,
    pre: &CentralState<T>,
    post: &CentralState<T>,
    phi: &DVector<T>,
    weight: InfoWeight<T>,
) -> Result<LyapRecord<T>> {
    let err = pre.theta_hat() - theta0;
    let err_next = post.theta_hat() - theta0;
    let w = w_quadratic(&err, pre.info())?;
    let w_next = w_quadratic(&err_next, post.info())?;
    let delta_w = w_next - w;
    let delta_w_closed = match weight {
        InfoWeight::NoiseVariance => Some(delta_w_central_closed(
            &err,
            phi,
            pre.sigma(),
            pre.noise_var().sqrt(),
        )),
        InfoWeight::Gamma(_) => None,
    };
    Ok(LyapRecord {
        k,
        w,
        delta_w,
        delta_w_closed,
        overline_delta_w: None,
        gamma_bound: None,
        gamma_sum: None,
        err_norm_sq: err.norm_squared(),
        orthogonal: is_orthogonal(phi, &err),
        violation: delta_w > T::lit(VIOLATION_TOL),
    })
}

/// Monitor record for one distributed round; `pre` and `post` are the
/// node states around the round, `alpha` the broadcast gain.
pub fn record_distributed<T: Scalar>(
    k: usize,
    theta0: &DVector<T>,
    pre: &[NodeState<T>],
    post: &[NodeState<T>],
    phi: &DVector<T>,
    alpha: T,
) -> Result<LyapRecord<T>> {
    let n = theta0.len();
    if phi.len() != n {
        return Err(Error::Dimension {
            context: "monitored regressor",
            expected: n,
            found: phi.len(),
        });
    }
    if pre.len() != post.len() {
        return Err(Error::Dimension {
            context: "monitored node count",
            expected: pre.len(),
            found: post.len(),
        });
    }
    let mut w = T::zero();
    let mut w_next = T::zero();
    let mut proj = T::zero();
    let mut quad = T::zero();
    let mut gamma_sum = T::zero();
    let mut err = DVector::zeros(n);
    let mut offset = 0;
    let mut sphis = Vec::with_capacity(pre.len());
    for (a, b) in pre.iter().zip(post) {
        let ni = a.order();
        if offset + ni > n || b.order() != ni {
            return Err(Error::Dimension {
                context: "monitored block sizes",
                expected: n,
                found: offset + ni,
            });
        }
        let t0 = theta0.rows(offset, ni);
        let e = a.theta_hat() - t0;
        let e_next = b.theta_hat() - t0;
        let phi_i = phi.rows(offset, ni).into_owned();
        w += w_quadratic(&e, a.info())?;
        w_next += w_quadratic(&e_next, b.info())?;
        proj += e.dot(&phi_i);
        let sphi = a.sigma() * &phi_i;
        quad += phi_i.dot(&sphi);
        gamma_sum += T::one() / (a.gamma() * a.gamma());
        err.rows_mut(offset, ni).copy_from(&e);
        sphis.push(sphi);
        offset += ni;
    }
    if offset != n {
        return Err(Error::Dimension {
            context: "monitored parameter count",
            expected: n,
            found: offset,
        });
    }

    let overline = overline_from_scalars(proj, quad, alpha);
    // F e = e - alpha Sigma_B phi (phi^T e), block by block
    let mut denominator = T::zero();
    let mut offset = 0;
    for sphi in &sphis {
        let ni = sphi.len();
        let fe = err.rows(offset, ni) - sphi * (alpha * proj);
        let s = fe.dot(&phi.rows(offset, ni));
        denominator += s * s;
        offset += ni;
    }

    let delta_w = w_next - w;
    Ok(LyapRecord {
        k,
        w,
        delta_w,
        delta_w_closed: None,
        overline_delta_w: Some(overline),
        gamma_bound: Some(bound_from_parts(denominator, overline)),
        gamma_sum: Some(gamma_sum),
        err_norm_sq: err.norm_squared(),
        orthogonal: is_orthogonal(phi, &err),
        violation: delta_w > T::lit(VIOLATION_TOL),
    })
}

/// Pre/post states around one central update.
#[derive(Debug, Clone)]
pub struct CentralSnapshot<T: Scalar> {
    pub pre: CentralState<T>,
    pub post: CentralState<T>,
    pub phi: DVector<T>,
    pub weight: InfoWeight<T>,
}

/// Pre/post node states around one distributed round.
#[derive(Debug, Clone)]
pub struct DistributedSnapshot<T: Scalar> {
    pub pre: Vec<NodeState<T>>,
    pub post: Vec<NodeState<T>>,
    pub phi: DVector<T>,
    pub alpha: T,
}

#[derive(Debug, Clone, Copy)]
pub enum Trace<'a, T: Scalar> {
    Central(&'a [CentralSnapshot<T>]),
    Distributed(&'a [DistributedSnapshot<T>]),
}

/// Evaluates every step of a recorded trajectory against the true
/// parameters.
pub fn check_trajectory<T: Scalar>(theta0: &DVector<T>, trace: Trace<'_, T>) -> Result<MonitorReport<T>> {
    match trace {
        Trace::Central(steps) => {
            let first = steps
                .first()
                .ok_or_else(|| Error::Parameter("empty trajectory".into()))?;
            let lambda = min_eigenvalue(first.pre.info());
            let records = steps
                .iter()
                .enumerate()
                .map(|(k, s)| record_central(k, theta0, &s.pre, &s.post, &s.phi, s.weight))
                .collect::<Result<Vec<_>>>()?;
            Ok(MonitorReport::new(MonitorMode::Central, records, lambda))
        }
        Trace::Distributed(steps) => {
            let first = steps
                .first()
                .ok_or_else(|| Error::Parameter("empty trajectory".into()))?;
            let lambda = first
                .pre
                .iter()
                .map(|n| min_eigenvalue(n.info()))
                .fold(T::max_value().expect("bounded scalar"), |a, b| a.min(b));
            let records = steps
                .iter()
                .enumerate()
                .map(|(k, s)| record_distributed(k, theta0, &s.pre, &s.post, &s.phi, s.alpha))
                .collect::<Result<Vec<_>>>()?;
            Ok(MonitorReport::new(MonitorMode::Distributed, records, lambda))
        }
    }
}

/// Per-step records plus summary queries.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorReport<T> {
    pub mode: MonitorMode,
    pub records: Vec<LyapRecord<T>>,
    /// Smallest eigenvalue of the initial information matrix.
    pub initial_lambda_min: T,
}

impl<T: Scalar> MonitorReport<T> {
    pub fn new(mode: MonitorMode, records: Vec<LyapRecord<T>>, initial_lambda_min: T) -> Self {
        Self {
            mode,
            records,
            initial_lambda_min,
        }
    }

    /// Steps whose one-step difference exceeded the violation tolerance.
    pub fn violations(&self) -> Vec<usize> {
        self.records.iter().filter(|r| r.violation).map(|r| r.k).collect()
    }

    /// Violations at steps not flagged orthogonal.
    pub fn nonorthogonal_violations(&self) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| r.violation && !r.orthogonal)
            .map(|r| r.k)
            .collect()
    }

    pub fn orthogonal_steps(&self) -> Vec<usize> {
        self.records.iter().filter(|r| r.orthogonal).map(|r| r.k).collect()
    }

    /// Non-orthogonal steps where the gamma condition was finite and failed.
    pub fn bound_failures(&self) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| {
                !r.orthogonal
                    && matches!(r.gamma_bound, Some(GammaBound::Finite(_)))
                    && !r.certified()
            })
            .map(|r| r.k)
            .collect()
    }

    /// The gamma condition held (or was vacuous) at every non-orthogonal step.
    pub fn bound_held_all(&self) -> bool {
        self.mode == MonitorMode::Distributed && self.bound_failures().is_empty()
    }

    pub fn certified_steps(&self) -> Vec<usize> {
        self.records.iter().filter(|r| r.certified()).map(|r| r.k).collect()
    }

    /// Steps where the gamma condition certified a decrease that did not
    /// happen. Any entry here is a defect in the estimator or the monitor.
    pub fn contradictions(&self) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| r.certified() && !r.orthogonal && !(r.delta_w < T::zero()))
            .map(|r| r.k)
            .collect()
    }

    /// `W(e(k), k) >= lambda_min(Sigma^{-1}(0)) ||e(k)||^2` at every step,
    /// with a relative slack for rounding.
    pub fn lower_bound_holds(&self) -> bool {
        let slack = T::lit(1e-10);
        self.records.iter().all(|r| {
            let lb = self.initial_lambda_min * r.err_norm_sq;
            r.w >= lb - slack * lb.abs().max(r.w.abs())
        })
    }

    pub fn csv_header(&self) -> Vec<&'static str> {
        monitor_columns(self.mode)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k"];
        header.extend(monitor_columns(self.mode));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.k.to_string()];
            row.extend(monitor_fields(self.mode, r));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Monitor column names (without `k`) for the given mode.
pub fn monitor_columns(mode: MonitorMode) -> Vec<&'static str> {
    match mode {
        MonitorMode::Central => vec!["W", "deltaW", "deltaW_closed", "orthogonal_flag", "violation_flag"],
        MonitorMode::Distributed => vec![
            "W",
            "deltaW",
            "overline_dW",
            "gamma_bound",
            "gamma_sum",
            "orthogonal_flag",
            "violation_flag",
        ],
    }
}

/// Formatted monitor fields matching [`monitor_columns`].
pub fn monitor_fields<T: Scalar>(mode: MonitorMode, r: &LyapRecord<T>) -> Vec<String> {
    let opt = |v: Option<T>| v.map_or_else(|| "NaN".to_string(), crate::fmt_real);
    let flag = |b: bool| if b { "1" } else { "0" }.to_string();
    let mut row = vec![crate::fmt_real(r.w), crate::fmt_real(r.delta_w)];
    match mode {
        MonitorMode::Central => row.push(opt(r.delta_w_closed)),
        MonitorMode::Distributed => {
            row.push(opt(r.overline_delta_w));
            row.push(match r.gamma_bound {
                Some(GammaBound::Finite(b)) => crate::fmt_real(b),
                Some(GammaBound::Degenerate) => "inf".into(),
                None => "NaN".into(),
            });
            row.push(opt(r.gamma_sum));
        }
    }
    row.push(flag(r.orthogonal));
    row.push(flag(r.violation));
    row
}

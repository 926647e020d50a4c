//! Seeded experiments: random MISO systems, excitation and noise, central
//! and distributed runs on the same data, Monte Carlo bias studies, and
//! trajectory CSV files.
//!
//! All randomness comes from ChaCha8 seeded with `seed`; each kind of draw
//! uses its own stream so that, e.g., changing the sample count does not
//! alter the drawn system:
//!
//! | stream | use |
//! |---|---|
//! | 0 | module orders and coefficients |
//! | 1 | input signals |
//! | 2 | output noise |
//! | 16 + r | output noise of Monte Carlo run `r` |
//!
//! Normal deviates are drawn as `f64` with `rand_distr::StandardNormal`
//! (ziggurat) and then scaled and converted to the scalar type.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::central::{CentralState, InfoWeight};
use crate::distributed::{write_round_csv, DistributedEstimator, RoundTrace};
use crate::error::{Error, Result};
use crate::fir::{MisoSystem, RegressorBank};
use crate::lyapunov::{
    monitor_columns, monitor_fields, record_central, record_distributed, MonitorMode, MonitorReport,
};
use crate::scalar::Scalar;

pub const SYSTEM_STREAM: u64 = 0;
pub const INPUT_STREAM: u64 = 1;
pub const NOISE_STREAM: u64 = 2;
pub const MONTE_CARLO_STREAM_BASE: u64 = 16;

/// Largest module order a config may request.
pub const MAX_ORDER: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Central,
    Distributed,
    Both,
}

impl RunMode {
    pub fn central(self) -> bool {
        matches!(self, RunMode::Central | RunMode::Both)
    }

    pub fn distributed(self) -> bool {
        matches!(self, RunMode::Distributed | RunMode::Both)
    }
}

/// Information weighting of the central baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CentralRule {
    /// `Sigma^{-1} += phi phi^T / gamma^2`, matching the distributed nodes.
    #[default]
    Gamma,
    /// `Sigma^{-1} += phi phi^T / sigma^2`.
    Sigma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ExperimentConfig<T: Scalar> {
    pub seed: u64,
    pub m: usize,
    /// Inclusive `[min, max]` range of module orders.
    pub order_range: (usize, usize),
    pub param_std: T,
    pub input_std: T,
    /// Standard deviation of the output noise.
    pub noise_std: T,
    pub gamma: T,
    /// Initial gain `Sigma(0) = init_c I`.
    pub init_c: T,
    pub samples: usize,
    pub mode: RunMode,
    pub monte_carlo_runs: usize,
    /// Record Lyapunov monitor columns (needs the true system).
    #[serde(default)]
    pub monitor: bool,
    #[serde(default)]
    pub central_update: CentralRule,
    /// Noise level assumed inside the estimator gains; defaults to
    /// `noise_std`.
    #[serde(default)]
    pub estimator_noise_std: Option<T>,
}

impl<T: Scalar> Default for ExperimentConfig<T> {
    fn default() -> Self {
        Self {
            seed: 0,
            m: 20,
            order_range: (1, 10),
            param_std: T::one(),
            input_std: T::one(),
            noise_std: T::lit(0.1),
            gamma: T::lit(100.0),
            init_c: T::lit(100.0),
            samples: 3500,
            mode: RunMode::Both,
            monte_carlo_runs: 0,
            monitor: false,
            central_update: CentralRule::Gamma,
            estimator_noise_std: None,
        }
    }
}

impl<T: Scalar> ExperimentConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if self.m == 0 {
            return bad("m must be >= 1".into());
        }
        let (lo, hi) = self.order_range;
        if lo < 1 || hi > MAX_ORDER || lo > hi {
            return bad(format!("order_range must satisfy 1 <= min <= max <= {MAX_ORDER}, got [{lo}, {hi}]"));
        }
        let positive = [
            ("param_std", self.param_std),
            ("input_std", self.input_std),
            ("gamma", self.gamma),
            ("init_c", self.init_c),
        ];
        for (name, value) in positive {
            if !(value > T::zero()) || !value.finite() {
                return bad(format!("{name} must be > 0, got {value}"));
            }
        }
        let nonneg = std::iter::once(("noise_std", self.noise_std))
            .chain(self.estimator_noise_std.map(|s| ("estimator_noise_std", s)));
        for (name, value) in nonneg {
            if value < T::zero() || !value.finite() {
                return bad(format!("{name} must be >= 0, got {value}"));
            }
        }
        if self.central_update == CentralRule::Sigma
            && self.mode.central()
            && !(self.estimator_noise_var() > T::zero())
        {
            return bad("sigma-weighted central update needs a positive estimator noise level".into());
        }
        Ok(())
    }

    /// Config matching an existing system: `m`, order range and noise level
    /// taken from it, everything else default.
    pub fn for_system(system: &MisoSystem<T>) -> Self {
        let orders = system.orders();
        let lo = orders.iter().copied().min().unwrap_or(1);
        let hi = orders.iter().copied().max().unwrap_or(1);
        Self {
            m: system.inputs(),
            order_range: (lo, hi),
            noise_std: system.noise_std(),
            ..Self::default()
        }
    }

    pub fn estimator_noise_var(&self) -> T {
        let s = self.estimator_noise_std.unwrap_or(self.noise_std);
        s * s
    }

    fn central_weight(&self) -> InfoWeight<T> {
        match self.central_update {
            CentralRule::Gamma => InfoWeight::Gamma(self.gamma),
            CentralRule::Sigma => InfoWeight::NoiseVariance,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Parameter(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal<T: Scalar>(rng: &mut ChaCha8Rng, std: T) -> T {
    let z: f64 = rng.sample(StandardNormal);
    T::lit(z) * std
}

/// Orders uniform over `order_range`, coefficients i.i.d. `N(0, param_std^2)`.
pub fn random_system<T: Scalar>(config: &ExperimentConfig<T>) -> Result<MisoSystem<T>> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, SYSTEM_STREAM);
    let (lo, hi) = config.order_range;
    let orders: Vec<usize> = (0..config.m).map(|_| rng.random_range(lo..=hi)).collect();
    let coeffs = orders
        .iter()
        .map(|&n| (0..n).map(|_| normal(&mut rng, config.param_std)).collect())
        .collect();
    MisoSystem::from_coeffs(coeffs, config.noise_std)
}

/// Input and noise realizations for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Signals<T> {
    /// `inputs[t][i] = u_i(t)`.
    pub inputs: Vec<Vec<T>>,
    /// `noise[t] = v(t)`.
    pub noise: Vec<T>,
}

impl<T: Scalar> Signals<T> {
    pub fn len(&self) -> usize {
        self.noise.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noise.is_empty()
    }
}

fn draw_inputs<T: Scalar>(config: &ExperimentConfig<T>, m: usize) -> Vec<Vec<T>> {
    let mut rng = stream_rng(config.seed, INPUT_STREAM);
    (0..config.samples)
        .map(|_| (0..m).map(|_| normal(&mut rng, config.input_std)).collect())
        .collect()
}

fn draw_noise<T: Scalar>(seed: u64, stream: u64, std: T, samples: usize) -> Vec<T> {
    if std == T::zero() {
        return vec![T::zero(); samples];
    }
    let mut rng = stream_rng(seed, stream);
    (0..samples).map(|_| normal(&mut rng, std)).collect()
}

/// Gaussian inputs `N(0, input_std^2)` per channel and white output noise
/// `N(0, noise_std^2)`; exactly zero noise when `noise_std = 0`.
pub fn generate_signals<T: Scalar>(system: &MisoSystem<T>, config: &ExperimentConfig<T>) -> Result<Signals<T>> {
    config.validate()?;
    Ok(Signals {
        inputs: draw_inputs(config, system.inputs()),
        noise: draw_noise(config.seed, NOISE_STREAM, config.noise_std, config.samples),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Central,
    Distributed,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Central => "central",
            EstimatorKind::Distributed => "distributed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep<T> {
    pub k: usize,
    pub err_norm_sq: T,
    /// `theta_hat - theta^0` after the step.
    pub errors: Vec<T>,
    pub eps: T,
    pub alpha: T,
}

/// Per-step error history of one estimator; row `k` is the state after
/// consuming sample `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Scalar> {
    pub kind: EstimatorKind,
    pub parameters: usize,
    pub steps: Vec<TrajectoryStep<T>>,
    pub monitor: Option<MonitorReport<T>>,
}

impl<T: Scalar> Trajectory<T> {
    fn new(kind: EstimatorKind, parameters: usize, monitor: bool, lambda_min: T) -> Self {
        let mode = match kind {
            EstimatorKind::Central => MonitorMode::Central,
            EstimatorKind::Distributed => MonitorMode::Distributed,
        };
        Self {
            kind,
            parameters,
            steps: Vec::new(),
            monitor: monitor.then(|| MonitorReport::new(mode, Vec::new(), lambda_min)),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn err_norm_sq(&self) -> Vec<T> {
        self.steps.iter().map(|s| s.err_norm_sq).collect()
    }

    pub fn final_err_norm_sq(&self) -> Option<T> {
        self.steps.last().map(|s| s.err_norm_sq)
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["k".to_string(), "err_norm_sq".to_string()];
        h.extend((1..=self.parameters).map(|j| format!("err_{j}")));
        if self.kind == EstimatorKind::Distributed {
            h.push("eps".into());
            h.push("alpha".into());
        }
        if let Some(report) = &self.monitor {
            h.extend(monitor_columns(report.mode).into_iter().map(String::from));
        }
        h
    }

    pub fn write_csv_to<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for (idx, step) in self.steps.iter().enumerate() {
            let mut row = vec![step.k.to_string(), crate::fmt_real(step.err_norm_sq)];
            row.extend(step.errors.iter().map(|&e| crate::fmt_real(e)));
            if self.kind == EstimatorKind::Distributed {
                row.push(crate::fmt_real(step.eps));
                row.push(crate::fmt_real(step.alpha));
            }
            if let Some(report) = &self.monitor {
                row.extend(monitor_fields(report.mode, &report.records[idx]));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes a trajectory as CSV: header, then one row per step.
pub fn write_trajectory_csv<T: Scalar>(trajectory: &Trajectory<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    trajectory
        .write_csv_to(BufWriter::new(file))
        .map_err(|e| csv_error(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    if let csv::ErrorKind::Io(_) = e.kind() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::format(path, e)
    }
}

/// A numeric CSV file read back into memory.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let header = reader
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(String::from)
            .collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(path, e))?;
            let row = record
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| Error::format(path, format!("{f:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

/// First index `k` with `values[k] <= frac * values[0]`.
pub fn first_crossing(values: &[f64], frac: f64) -> Option<usize> {
    let reference = *values.first()?;
    values.iter().position(|&v| v <= frac * reference)
}

/// Everything one experiment produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome<T: Scalar> {
    pub system: MisoSystem<T>,
    pub central: Option<Trajectory<T>>,
    pub distributed: Option<Trajectory<T>>,
    /// Round-by-round message log of the distributed estimator.
    pub rounds: Vec<RoundTrace<T>>,
}

impl<T: Scalar> ExperimentOutcome<T> {
    /// Writes `<prefix>-central.csv`, `<prefix>-distributed.csv` and
    /// `<prefix>-rounds.csv` for the estimators that ran; returns the paths.
    pub fn write_csvs(&self, prefix: &str) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for traj in self.central.iter().chain(&self.distributed) {
            let path = PathBuf::from(format!("{prefix}-{}.csv", traj.kind.label()));
            write_trajectory_csv(traj, &path)?;
            written.push(path);
        }
        if self.distributed.is_some() {
            let path = PathBuf::from(format!("{prefix}-rounds.csv"));
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_round_csv(self.system.inputs(), &self.rounds, BufWriter::new(file))
                .map_err(|e| csv_error(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }

    /// Writes `<prefix>-<kind>-monitor.csv` for every monitored estimator.
    pub fn write_monitor_csvs(&self, prefix: &str) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for traj in self.central.iter().chain(&self.distributed) {
            if let Some(report) = &traj.monitor {
                let path = PathBuf::from(format!("{prefix}-{}-monitor.csv", traj.kind.label()));
                let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
                report.write_csv(BufWriter::new(file)).map_err(|e| csv_error(&path, e))?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

/// Draws a system from the config and runs it.
pub fn run_experiment<T: Scalar>(config: &ExperimentConfig<T>) -> Result<ExperimentOutcome<T>> {
    let system = random_system(config)?;
    run_with_system(config, system)
}

/// Runs the configured estimators on `system`. Both estimators see the
/// same inputs and noise; the output noise level comes from
/// `config.noise_std`.
pub fn run_with_system<T: Scalar>(config: &ExperimentConfig<T>, system: MisoSystem<T>) -> Result<ExperimentOutcome<T>> {
    let signals = generate_signals(&system, config)?;
    run_on_signals(config, system, &signals)
}

/// Runs the configured estimators on a given signal realization.
pub fn run_on_signals<T: Scalar>(
    config: &ExperimentConfig<T>,
    system: MisoSystem<T>,
    signals: &Signals<T>,
) -> Result<ExperimentOutcome<T>> {
    config.validate()?;
    let n = system.parameter_count();
    let orders = system.orders();
    let theta0 = system.theta();
    let noise_var = config.estimator_noise_var();
    let weight = config.central_weight();
    let lambda0 = T::one() / config.init_c;

    let mut central = config
        .mode
        .central()
        .then(|| CentralState::from_scratch(n, config.init_c, noise_var))
        .transpose()?;
    let mut distributed = config
        .mode
        .distributed()
        .then(|| DistributedEstimator::new(&orders, config.init_c, config.gamma, noise_var))
        .transpose()?;
    let mut central_traj = central
        .as_ref()
        .map(|_| Trajectory::new(EstimatorKind::Central, n, config.monitor, lambda0));
    let mut dist_traj = distributed
        .as_ref()
        .map(|_| Trajectory::new(EstimatorKind::Distributed, n, config.monitor, lambda0));
    let mut rounds = Vec::new();

    let mut bank = RegressorBank::for_system(&system);
    for (t, (u, &v)) in signals.inputs.iter().zip(&signals.noise).enumerate() {
        let step = |e: Error| e.at_step(t);
        bank.push_inputs(u).map_err(step)?;
        let y = system.noisy_output(&bank, v).map_err(step)?;

        if let (Some(state), Some(traj)) = (central.as_mut(), central_traj.as_mut()) {
            let phi = bank.stacked();
            let pre = traj.monitor.is_some().then(|| state.clone());
            let info = state.apply(&phi, y, weight).map_err(step)?;
            let err = state.theta_hat() - &theta0;
            if let (Some(pre), Some(report)) = (pre, traj.monitor.as_mut()) {
                let record = record_central(t, &theta0, &pre, state, &phi, weight).map_err(step)?;
                report.records.push(record);
            }
            traj.steps.push(TrajectoryStep {
                k: t,
                err_norm_sq: err.norm_squared(),
                errors: err.iter().copied().collect(),
                eps: info.prediction_error,
                alpha: info.alpha,
            });
        }

        if let (Some(est), Some(traj)) = (distributed.as_mut(), dist_traj.as_mut()) {
            let pre = traj.monitor.is_some().then(|| est.nodes().to_vec());
            let trace = est.run_round(&bank, y).map_err(step)?;
            let err = &trace.theta_b - &theta0;
            if let (Some(pre), Some(report)) = (pre, traj.monitor.as_mut()) {
                let record = record_distributed(t, &theta0, &pre, est.nodes(), &bank.stacked(), trace.down.alpha)
                    .map_err(step)?;
                report.records.push(record);
            }
            traj.steps.push(TrajectoryStep {
                k: t,
                err_norm_sq: err.norm_squared(),
                errors: err.iter().copied().collect(),
                eps: trace.down.prediction_error,
                alpha: trace.down.alpha,
            });
            rounds.push(trace);
        }
    }

    Ok(ExperimentOutcome {
        system,
        central: central_traj,
        distributed: dist_traj,
        rounds,
    })
}

/// Distribution of final distributed estimates over independent noise
/// realizations with fixed inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasStudy<T: Scalar> {
    pub theta0: DVector<T>,
    pub finals: Vec<DVector<T>>,
    pub mean: DVector<T>,
    /// Sample standard deviation per coordinate.
    pub std: DVector<T>,
}

impl<T: Scalar> BiasStudy<T> {
    pub fn runs(&self) -> usize {
        self.finals.len()
    }

    /// Per coordinate: `|mean - theta^0| <= z * std / sqrt(runs)`.
    pub fn within(&self, z: T) -> Vec<bool> {
        let root = T::from_usize(self.runs()).expect("run count").sqrt();
        self.mean
            .iter()
            .zip(self.theta0.iter())
            .zip(self.std.iter())
            .map(|((&mean, &truth), &std)| (mean - truth).abs() <= z * std / root)
            .collect()
    }
}

/// Runs the distributed estimator `config.monte_carlo_runs` times on
/// `system` with the same inputs and fresh output noise each time.
pub fn monte_carlo_bias<T: Scalar>(config: &ExperimentConfig<T>, system: &MisoSystem<T>) -> Result<BiasStudy<T>> {
    config.validate()?;
    let runs = config.monte_carlo_runs;
    if runs < 2 {
        return Err(Error::Parameter("Monte Carlo study needs at least two runs".into()));
    }
    let inputs = draw_inputs(config, system.inputs());
    let orders = system.orders();
    let noise_var = config.estimator_noise_var();

    let finals = (0..runs)
        .into_par_iter()
        .map(|r| {
            let noise = draw_noise(
                config.seed,
                MONTE_CARLO_STREAM_BASE + r as u64,
                config.noise_std,
                config.samples,
            );
            let mut est = DistributedEstimator::new(&orders, config.init_c, config.gamma, noise_var)?;
            let mut bank = RegressorBank::for_system(system);
            for (t, (u, &v)) in inputs.iter().zip(&noise).enumerate() {
                bank.push_inputs(u).map_err(|e| e.at_step(t))?;
                let y = system.noisy_output(&bank, v).map_err(|e| e.at_step(t))?;
                est.run_round(&bank, y).map_err(|e| e.at_step(t))?;
            }
            Ok(est.theta_b())
        })
        .collect::<Result<Vec<_>>>()?;

    let n = system.parameter_count();
    let count = T::from_usize(runs).expect("run count");
    let mut mean = DVector::zeros(n);
    for f in &finals {
        mean += f;
    }
    mean /= count;
    let mut var = DVector::zeros(n);
    for f in &finals {
        let d = f - &mean;
        var += d.component_mul(&d);
    }
    var /= count - T::one();
    Ok(BiasStudy {
        theta0: system.theta(),
        finals,
        mean,
        std: var.map(|x| x.sqrt()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> ExperimentConfig<f64> {
        ExperimentConfig {
            seed,
            m: 2,
            order_range: (2, 2),
            samples: 200,
            noise_std: 0.0,
            estimator_noise_std: Some(0.0),
            ..Default::default()
        }
    }

    #[test]
    fn default_config_values() {
        let cfg = ExperimentConfig::<f64>::default();
        assert_eq!(cfg.m, 20);
        assert_eq!(cfg.order_range, (1, 10));
        assert_eq!(cfg.noise_std, 0.1);
        assert_eq!(cfg.gamma, 100.0);
        assert_eq!(cfg.init_c, 100.0);
        let sys = random_system(&cfg).unwrap();
        assert_eq!(sys.inputs(), 20);
        assert!(sys.orders().iter().all(|&n| (1..=10).contains(&n)));
        assert_eq!(sys.parameter_count(), sys.orders().iter().sum::<usize>());
    }

    #[test]
    fn degenerate_order_range() {
        let cfg = ExperimentConfig::<f64> {
            order_range: (1, 1),
            m: 7,
            ..Default::default()
        };
        let sys = random_system(&cfg).unwrap();
        assert_eq!(sys.orders(), vec![1; 7]);
        assert_eq!(sys.parameter_count(), 7);
    }

    #[test]
    fn systems_and_signals_are_reproducible() {
        let cfg = ExperimentConfig::<f64> {
            seed: 42,
            samples: 50,
            ..Default::default()
        };
        let a = random_system(&cfg).unwrap();
        let b = random_system(&cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let sa = generate_signals(&a, &cfg).unwrap();
        let sb = generate_signals(&b, &cfg).unwrap();
        assert_eq!(sa, sb);
        let other = random_system(&ExperimentConfig { seed: 43, ..cfg.clone() }).unwrap();
        assert_ne!(a, other);
        // the system draw does not depend on the sample count
        let longer = random_system(&ExperimentConfig { samples: 5000, ..cfg }).unwrap();
        assert_eq!(a, longer);
    }

    #[test]
    fn zero_noise_is_exactly_zero() {
        let cfg = small(3);
        let sys = random_system(&cfg).unwrap();
        let s = generate_signals(&sys, &cfg).unwrap();
        assert!(s.noise.iter().all(|&v| v.to_bits() == 0));
        assert_eq!(s.inputs.len(), 200);
        assert!(s.inputs.iter().all(|row| row.len() == 2));
    }

    #[test]
    fn noise_mean_within_standard_error() {
        let samples = 100_000;
        let cfg = ExperimentConfig::<f64> {
            samples,
            m: 1,
            ..Default::default()
        };
        let sys = random_system(&cfg).unwrap();
        let s = generate_signals(&sys, &cfg).unwrap();
        let mean = s.noise.iter().sum::<f64>() / samples as f64;
        assert!(mean.abs() <= 4.0 * 0.1 / (samples as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn noise_free_central_recovers_truth() {
        let cfg = ExperimentConfig {
            mode: RunMode::Central,
            ..small(11)
        };
        let out = run_experiment(&cfg).unwrap();
        let traj = out.central.unwrap();
        assert_eq!(traj.len(), 200);
        assert!(traj.final_err_norm_sq().unwrap() < 1e-10);
        assert!(out.distributed.is_none());
    }

    #[test]
    fn both_estimators_share_the_data() {
        let cfg = ExperimentConfig::<f64> {
            samples: 30,
            m: 3,
            order_range: (1, 3),
            ..ExperimentConfig::default()
        };
        let out = run_experiment(&cfg).unwrap();
        let (c, d) = (out.central.unwrap(), out.distributed.unwrap());
        // identical data and initial state: first prediction errors agree
        assert_eq!(c.steps[0].eps, d.steps[0].eps);
        assert_eq!(out.rounds.len(), 30);
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = ExperimentConfig::<f64>::default();
        for cfg in [
            ExperimentConfig { m: 0, ..base.clone() },
            ExperimentConfig { order_range: (0, 3), ..base.clone() },
            ExperimentConfig { order_range: (4, 3), ..base.clone() },
            ExperimentConfig { order_range: (1, 65), ..base.clone() },
            ExperimentConfig { gamma: 0.0, ..base.clone() },
            ExperimentConfig { init_c: -1.0, ..base.clone() },
            ExperimentConfig { noise_std: -0.1, ..base.clone() },
            ExperimentConfig {
                central_update: CentralRule::Sigma,
                noise_std: 0.0,
                ..base.clone()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Parameter(_))), "{cfg:?}");
        }
    }

    #[test]
    fn config_json_field_names() {
        let cfg = ExperimentConfig::<f64>::default();
        let value: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
        for key in [
            "seed",
            "m",
            "order_range",
            "param_std",
            "input_std",
            "noise_std",
            "gamma",
            "init_c",
            "samples",
            "mode",
            "monte_carlo_runs",
        ] {
            assert!(value.get(key).is_some(), "{key}");
        }
        assert_eq!(value["mode"], "both");
        assert_eq!(value["order_range"], serde_json::json!([1, 10]));
        let minimal = r#"{"seed": 1, "m": 2, "order_range": [1, 3], "param_std": 1, "input_std": 1,
            "noise_std": 0.1, "gamma": 100, "init_c": 100, "samples": 10, "mode": "central",
            "monte_carlo_runs": 0}"#;
        let parsed = ExperimentConfig::<f64>::from_json(minimal).unwrap();
        assert_eq!(parsed.mode, RunMode::Central);
        assert!(!parsed.monitor);
        assert!(ExperimentConfig::<f64>::from_json(&minimal.replace("\"m\"", "\"mm\"")).is_err());
    }

    #[test]
    fn first_crossing_rules() {
        assert_eq!(first_crossing(&[4.0, 3.0, 1.0, 0.5], 0.25), Some(2));
        assert_eq!(first_crossing(&[4.0, 3.0], 1.0), Some(0));
        assert_eq!(first_crossing(&[4.0, 3.0], 0.1), None);
        assert_eq!(first_crossing(&[], 0.5), None);
    }

    #[test]
    fn trajectory_csv_shape() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            samples: 5,
            mode: RunMode::Distributed,
            monitor: true,
            ..small(1)
        };
        let out = run_experiment(&cfg).unwrap();
        let traj = out.distributed.unwrap();
        let path = dir.path().join("d.csv");
        write_trajectory_csv(&traj, &path).unwrap();
        let table = CsvTable::read(&path).unwrap();
        assert_eq!(
            table.header,
            [
                "k", "err_norm_sq", "err_1", "err_2", "err_3", "err_4", "eps", "alpha", "W", "deltaW",
                "overline_dW", "gamma_bound", "gamma_sum", "orthogonal_flag", "violation_flag"
            ]
        );
        assert_eq!(table.rows.len(), 5);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn empty_trajectory_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            samples: 0,
            ..small(1)
        };
        let out = run_experiment(&cfg).unwrap();
        let path = dir.path().join("c.csv");
        write_trajectory_csv(out.central.as_ref().unwrap(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("k,err_norm_sq,err_1"));
    }

    #[test]
    fn unwritable_path_reports_io() {
        let cfg = ExperimentConfig {
            samples: 2,
            ..small(1)
        };
        let out = run_experiment(&cfg).unwrap();
        let err = write_trajectory_csv(out.central.as_ref().unwrap(), "/nonexistent-dir/x.csv").unwrap_err();
        assert!(err.is_io());
        assert!(err.to_string().contains("/nonexistent-dir/x.csv"));
    }

    #[test]
    fn numeric_failure_carries_step() {
        let cfg = ExperimentConfig {
            samples: 3,
            ..small(1)
        };
        let sys = MisoSystem::from_coeffs(vec![vec![1.0, 1.0], vec![1.0, 1.0]], 0.0).unwrap();
        let signals = Signals {
            inputs: vec![vec![1.0, 1.0], vec![1e200, 1.0], vec![1.0, 1.0]],
            noise: vec![0.0; 3],
        };
        let err = run_on_signals(&cfg, sys, &signals).unwrap_err();
        assert_eq!(err.step(), Some(1));
    }
}

//! Distributed recursive identification of multi-input single-output FIR
//! systems.
//!
//! Each input channel `i` passes through an FIR module with unknown
//! coefficients `theta_i`; a node per channel keeps its own estimate and
//! gain, and a fusion center combines scalar messages so that every round
//! costs `2m` scalars up and 2 scalars down. A centralized recursive
//! least-squares estimator serves as the baseline, and a Lyapunov monitor
//! checks `W = e^T Sigma^{-1} e` along either trajectory.
//!
//! Everything is generic over the [`Scalar`] type (`f32` or `f64`); the
//! aliases below fix it to one of them.

pub mod central;
pub mod distributed;
pub mod error;
pub mod experiment;
pub mod fir;
pub mod linalg;
pub mod lyapunov;
mod scalar;

pub use central::{batch_covariance, batch_lse, CentralState, CentralStep, InfoWeight, SINGULARITY_LIMIT};
pub use distributed::{
    round_csv_header, write_round_csv, BlockState, DistributedEstimator, FusionCenter, NodeState, RoundMessageDown,
    RoundMessageUp, RoundTrace,
};
pub use error::{Error, ProtocolError, Result};
pub use experiment::{
    first_crossing, generate_signals, monte_carlo_bias, random_system, run_experiment, run_on_signals,
    run_with_system, write_trajectory_csv, BiasStudy, CentralRule, CsvTable, EstimatorKind, ExperimentConfig,
    ExperimentOutcome, RunMode, Signals, Trajectory, TrajectoryStep,
};
pub use fir::{predict, FirModule, MisoSystem, RegressorBank};
pub use lyapunov::{check_trajectory, GammaBound, LyapRecord, MonitorMode, MonitorReport, Trace};
pub use nalgebra::{DMatrix, DVector};
pub use scalar::Scalar;

/// Formats a real with 17 significant digits, enough to round-trip `f64`.
pub fn fmt_real<T: Scalar>(x: T) -> String {
    format!("{x:.16e}")
}

pub type MisoSystem64 = MisoSystem<f64>;
pub type RegressorBank64 = RegressorBank<f64>;
pub type CentralState64 = CentralState<f64>;
pub type NodeState64 = NodeState<f64>;
pub type DistributedEstimator64 = DistributedEstimator<f64>;
pub type ExperimentConfig64 = ExperimentConfig<f64>;
pub type MonitorReport64 = MonitorReport<f64>;

pub type MisoSystem32 = MisoSystem<f32>;
pub type RegressorBank32 = RegressorBank<f32>;
pub type CentralState32 = CentralState<f32>;
pub type NodeState32 = NodeState<f32>;
pub type DistributedEstimator32 = DistributedEstimator<f32>;
pub type ExperimentConfig32 = ExperimentConfig<f32>;
pub type MonitorReport32 = MonitorReport<f32>;

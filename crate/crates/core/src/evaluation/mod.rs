//! Baselines, the short-term protocol, bootstrap intervals and ablations.

pub mod ablation;
pub mod baselines;
pub mod bootstrap;
pub mod h36m;
pub mod protocol;

pub use baselines::{baseline_running_average, baseline_zero_velocity, NetworkPredictor, Predictor, RunningAverage, ZeroVelocity};
pub use bootstrap::{bootstrap_ci, BootstrapConfig};
pub use protocol::{run_protocol, EvalClip, EvalProtocol, EvalReport, ReportRow};

//! Benchmark systems, TOML-configured experiments, rate fitting, sweeps and
//! result aggregation around the IPG observer.

pub mod config;
pub mod error;
pub mod experiment;
pub mod rate;
pub mod report;
pub mod sweep;
pub mod systems;

pub use config::{AlphaSpec, AuditSpec, ExperimentConfig, Format, KInitSpec, ObserverKind, ObserverSpec, RegionSpec, SystemSpec};
pub use error::{HarnessError, Result};
pub use experiment::{
    audit, execute, run_experiment, simulate_truth, write_artifacts, write_audit, write_trajectory, AuditOutcome,
    ExperimentResult, VerdictEntry,
};
pub use rate::{error_ratios, fit_linear_rate, RateFit, ERROR_FLOOR};
pub use report::{collect_report, Report, ReportRow};
pub use sweep::{expand_sweep, SweepPoint};
pub use systems::{builtin_system, Params, BUILTIN_IDS, POSITIVE_EIGENVALUE_IDS};

//! Iteratively preconditioned gradient-descent (IPG) observer for
//! discrete-time nonlinear systems, a Newton-observer baseline, and
//! numerical estimators for the constants and sufficient conditions of the
//! observer's local linear convergence guarantee.

pub mod assumptions;
pub mod conditions;
pub mod error;
pub mod ipg;
pub mod linalg;
pub mod newton;
pub mod observer;
pub mod system;
pub mod trace;
pub mod window;

pub use assumptions::{
    estimate_constants, measure_rho, measure_rho_from, sampled_rho, step_mismatch_sequence, ConstantsReport, Region,
    RhoReport,
};
pub use conditions::{
    check_theorem_conditions, AuditInputs, ConditionEntry, ConditionReport, DerivedQuantities, Relation, Verdict,
};
pub use error::{Error, Result};
pub use ipg::{
    advance_window, ipg_inner_step, propagate_estimate, run_ipg_observer, step_size, AlphaSchedule, IpgConfig, IpgState,
    TheoremSchedule,
};
pub use newton::{newton_inner_step, run_newton_observer, NewtonConfig};
pub use observer::{Estimate, ObserverRun};
pub use system::{fd_jacobian, simulate, SystemModel, Trajectory};
pub use trace::{InstantRecord, IterationRecord, RunTrace, CSV_HEADER};
pub use window::{JacobianSource, ObservabilityWindow};

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;

//! Moving-window skeleton shared by the IPG and Newton observers: window
//! assembly, per-instant solve, forward propagation of the estimate, and the
//! hand-off to the next instant.
//!
//! Instants are numbered from 1 so the first estimate is produced at `k = N`:
//! `measurements[j]` is `y_{j+1}` and `truth.states[j]` is `x_{j+1}`.

use crate::error::{Error, Result};
use crate::linalg::all_finite;
use crate::system::{SystemModel, Trajectory};
use crate::trace::{InstantRecord, RunTrace};
use crate::window::ObservabilityWindow;
use crate::{Matrix, Vector};

/// `x̂_k`, the estimate of the newest state in the window at instant `k`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Estimate {
    pub k: usize,
    pub x_hat: Vector,
}

#[derive(Debug, Clone)]
pub struct ObserverRun {
    pub estimates: Vec<Estimate>,
    pub trace: RunTrace,
    /// `w_k^(d)` of the last completed instant.
    pub final_w: Option<Vector>,
    /// Preconditioner after the last completed instant (IPG only).
    pub final_preconditioner: Option<Matrix>,
    /// Set when the run aborted on divergence or a singular Jacobian; the
    /// estimates and trace then hold everything produced before the abort.
    pub failure: Option<Error>,
}

impl ObserverRun {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }
}

/// Errors that abort a run but keep the partial trace.
pub(crate) fn is_numerical_failure(e: &Error) -> bool {
    matches!(e, Error::Divergence { .. } | Error::SingularJacobian { .. } | Error::NonFinite(_))
}

pub(crate) struct InstantContext<'a> {
    pub k: usize,
    pub window: &'a ObservabilityWindow,
    pub measurements: &'a Vector,
    /// `x_{k−N+1}`, the state the inner iterations estimate.
    pub truth_start: Option<&'a Vector>,
}

pub(crate) trait InstantSolver {
    /// Runs the inner iterations of one instant from `w_k^(0)` and returns `w_k^(d)`.
    fn solve(&mut self, w: Vector, ctx: &InstantContext<'_>, trace: &mut RunTrace) -> Result<Vector>;

    fn preconditioner(&self) -> Option<&Matrix> {
        None
    }
}

pub(crate) fn stack(measurements: &[Vector]) -> Vector {
    let rows: usize = measurements.iter().map(|y| y.len()).sum();
    Vector::from_iterator(rows, measurements.iter().flat_map(|y| y.iter().copied()))
}

pub(crate) fn drive<S: InstantSolver>(
    system: &SystemModel,
    window_n: usize,
    measurements: &[Vector],
    inputs: &[Vector],
    truth: Option<&Trajectory>,
    w_init: &Vector,
    solver: &mut S,
) -> Result<ObserverRun> {
    let n = system.state_dim();
    let p = system.output_dim();
    let horizon = measurements.len();
    if window_n == 0 {
        return Err(Error::Config("window length N must be positive".into()));
    }
    if horizon < window_n {
        return Err(Error::Config(format!(
            "need at least N = {window_n} measurements, got {horizon}"
        )));
    }
    if window_n * p != n {
        return Err(Error::NonSquareWindow { n, rows: window_n * p });
    }
    if w_init.len() != n {
        return Err(Error::dimension("initial estimate w", n, w_init.len()));
    }
    if let Some(bad) = measurements.iter().find(|y| y.len() != p) {
        return Err(Error::dimension("measurement vector", p, bad.len()));
    }
    if let Some(t) = truth {
        if t.states.len() < horizon {
            return Err(Error::dimension("truth trajectory length", horizon, t.states.len()));
        }
    }
    let inputs = system.expand_inputs(inputs, horizon.saturating_sub(1), "observer inputs")?;

    let mut run = ObserverRun {
        estimates: Vec::with_capacity(horizon + 1 - window_n),
        trace: RunTrace::new(),
        final_w: None,
        final_preconditioner: None,
        failure: None,
    };
    let mut w = w_init.clone();
    for k in window_n..=horizon {
        let start = k - window_n;
        let window = ObservabilityWindow::new(system.clone(), window_n, &inputs[start..k - 1])?;
        let y = stack(&measurements[start..k]);
        let ctx = InstantContext {
            k,
            window: &window,
            measurements: &y,
            truth_start: truth.map(|t| &t.states[start]),
        };
        let w_d = match solver.solve(w, &ctx, &mut run.trace) {
            Ok(w_d) => w_d,
            Err(e) if is_numerical_failure(&e) => {
                run.failure = Some(e);
                return Ok(run);
            }
            Err(e) => return Err(e),
        };
        let x_hat = window.propagate(&w_d)?;
        if !all_finite(&x_hat) {
            run.failure = Some(Error::Divergence {
                k,
                i: 0,
                reason: "non-finite propagated estimate".into(),
            });
            return Ok(run);
        }
        let err_xhat = truth.map(|t| (&x_hat - &t.states[k - 1]).norm());
        run.trace.push_instant(InstantRecord { k, err_xhat });
        run.estimates.push(Estimate { k, x_hat });
        run.final_preconditioner = solver.preconditioner().cloned();
        run.final_w = Some(w_d.clone());
        // w_{k+1}^(0) = F^{u_{k−N+1}}(w_k^(d))
        w = if k < horizon {
            system.step(&w_d, &inputs[start])?
        } else {
            w_d
        };
    }
    Ok(run)
}

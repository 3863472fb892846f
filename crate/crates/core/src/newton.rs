//! Newton observer over the same moving window, the reference the IPG
//! observer approaches once its preconditioner has converged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipg::window_length;
use crate::linalg::{all_finite, checked_solve};
use crate::observer::{drive, InstantContext, InstantSolver, ObserverRun};
use crate::system::{SystemModel, Trajectory};
use crate::trace::{IterationRecord, RunTrace};
use crate::window::ObservabilityWindow;
use crate::Vector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    /// Newton iterations per instant.
    pub d: usize,
    pub w_init: Vector,
    /// Step multiplier in `(0, 1]`.
    pub damping: f64,
}

impl NewtonConfig {
    pub fn new(d: usize, w_init: Vector) -> Self {
        NewtonConfig { d, w_init, damping: 1.0 }
    }

    pub fn with_damping(mut self, damping: f64) -> Self {
        self.damping = damping;
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if self.w_init.len() != n {
            return Err(Error::dimension("w_init", n, self.w_init.len()));
        }
        Ok(())
    }
}

/// `w′ = w − damping·H_x(w)⁻¹·(H(w) − Y)`, solved by LU.
pub fn newton_inner_step(w: &Vector, y: &Vector, window: &ObservabilityWindow, damping: f64) -> Result<Vector> {
    if y.len() != window.dim() {
        return Err(Error::dimension("stacked measurements", window.dim(), y.len()));
    }
    let jac = window.jacobian(w)?;
    let residual = window.evaluate(w)? - y;
    let step = checked_solve(&jac, &residual).map_err(|cond| Error::singular(cond, w))?;
    Ok(w - step * damping)
}

struct NewtonSolver<'a> {
    config: &'a NewtonConfig,
}

impl InstantSolver for NewtonSolver<'_> {
    fn solve(&mut self, mut w: Vector, ctx: &InstantContext<'_>, trace: &mut RunTrace) -> Result<Vector> {
        for i in 0..self.config.d {
            w = newton_inner_step(&w, ctx.measurements, ctx.window, self.config.damping).map_err(|e| match e {
                Error::NonFinite(what) => Error::Divergence { k: ctx.k, i, reason: what },
                other => other,
            })?;
            if !all_finite(&w) || w.norm() > crate::ipg::DIVERGENCE_NORM {
                return Err(Error::Divergence {
                    k: ctx.k,
                    i,
                    reason: "Newton iterate left the finite range".into(),
                });
            }
            trace.push_iteration(IterationRecord {
                k: ctx.k,
                i,
                alpha: None,
                err_w: ctx.truth_start.map(|x| (&w - x).norm()),
                precond_residual: None,
                err_k: None,
                contraction: None,
            });
        }
        Ok(w)
    }
}

/// Newton observer with the same windowing, propagation and warm start as
/// [`run_ipg_observer`](crate::ipg::run_ipg_observer).
pub fn run_newton_observer(
    system: &SystemModel,
    measurements: &[Vector],
    inputs: &[Vector],
    config: &NewtonConfig,
    truth: Option<&Trajectory>,
) -> Result<ObserverRun> {
    let window_n = window_length(system)?;
    config.validate(system.state_dim())?;
    let mut solver = NewtonSolver { config };
    drive(system, window_n, measurements, inputs, truth, &config.w_init, &mut solver)
}

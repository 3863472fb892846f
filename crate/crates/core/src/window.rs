//! The stacked observability map over a window of `N` measurements.

use crate::error::{Error, Result};
use crate::system::{fallback_step, fd_jacobian, SystemModel};
use crate::{Matrix, Vector};

/// How [`ObservabilityWindow::jacobian`] obtained its result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianSource {
    /// Chain rule over the user-supplied `∂F/∂x` and `∂h/∂x`.
    ChainRule,
    /// Central differences of [`ObservabilityWindow::evaluate`].
    FiniteDifference,
}

/// `H^U(x) = [h(x); h(F^{u_0}(x)); …; h(F^{u_{N-2}} ∘ … ∘ F^{u_0}(x))]`.
///
/// Inputs are stored oldest first and the map is required to be square
/// (`n = N·p`).
#[derive(Debug, Clone)]
pub struct ObservabilityWindow {
    system: SystemModel,
    window_n: usize,
    inputs: Vec<Vector>,
}

impl ObservabilityWindow {
    /// Builds a window from `N − 1` inputs (an empty list for autonomous systems).
    pub fn new(system: SystemModel, window_n: usize, inputs: &[Vector]) -> Result<Self> {
        if window_n == 0 {
            return Err(Error::Config("window length N must be positive".into()));
        }
        let rows = window_n * system.output_dim();
        if rows != system.state_dim() {
            return Err(Error::NonSquareWindow {
                n: system.state_dim(),
                rows,
            });
        }
        if !(system.is_autonomous() && inputs.is_empty()) && inputs.len() != window_n - 1 {
            return Err(Error::dimension("window inputs", window_n - 1, inputs.len()));
        }
        let inputs = system.expand_inputs(inputs, window_n - 1, "window inputs")?;
        Ok(ObservabilityWindow {
            system,
            window_n,
            inputs,
        })
    }

    /// Same system and `N`, new inputs.
    pub fn with_inputs(&self, inputs: &[Vector]) -> Result<Self> {
        Self::new(self.system.clone(), self.window_n, inputs)
    }

    pub fn system(&self) -> &SystemModel {
        &self.system
    }

    pub fn window_n(&self) -> usize {
        self.window_n
    }

    pub fn inputs(&self) -> &[Vector] {
        &self.inputs
    }

    /// Always true: non-square windows are rejected at construction.
    pub fn is_square(&self) -> bool {
        true
    }

    pub fn dim(&self) -> usize {
        self.system.state_dim()
    }

    fn check(&self, x: &Vector) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dimension("observability map argument", self.dim(), x.len()));
        }
        Ok(())
    }

    /// `N·p`-vector of stacked outputs, oldest block first.
    pub fn evaluate(&self, x: &Vector) -> Result<Vector> {
        self.check(x)?;
        let p = self.system.output_dim();
        let mut stacked = Vector::zeros(self.window_n * p);
        let mut z = x.clone();
        for j in 0..self.window_n {
            if j > 0 {
                z = self.system.step(&z, &self.inputs[j - 1])?;
            }
            let y = self.system.output(&z)?;
            stacked.rows_mut(j * p, p).copy_from(&y);
        }
        Ok(stacked)
    }

    /// `∂H^U/∂x`, with the source that produced it.
    pub fn jacobian_with_source(&self, x: &Vector) -> Result<(Matrix, JacobianSource)> {
        self.check(x)?;
        if self.system.has_analytic_jacobians() {
            Ok((self.chain_rule_jacobian(x)?, JacobianSource::ChainRule))
        } else {
            let jac = fd_jacobian(|z| self.evaluate(z).unwrap_or_else(|_| Vector::from_element(self.dim(), f64::NAN)), x, fallback_step(x))?;
            Ok((jac, JacobianSource::FiniteDifference))
        }
    }

    /// `∂H^U/∂x`: chain rule when both analytic Jacobians exist, central
    /// differences of [`evaluate`](Self::evaluate) otherwise.
    pub fn jacobian(&self, x: &Vector) -> Result<Matrix> {
        self.jacobian_with_source(x).map(|(j, _)| j)
    }

    fn chain_rule_jacobian(&self, x: &Vector) -> Result<Matrix> {
        let n = self.dim();
        let p = self.system.output_dim();
        let mut jac = Matrix::zeros(self.window_n * p, n);
        let mut z = x.clone();
        // d z_j / d x
        let mut sensitivity = Matrix::identity(n, n);
        for j in 0..self.window_n {
            if j > 0 {
                let u = &self.inputs[j - 1];
                sensitivity = self.system.dynamics_jacobian(&z, u)? * sensitivity;
                z = self.system.step(&z, u)?;
            }
            let block = self.system.output_jacobian(&z)? * &sensitivity;
            jac.view_mut((j * p, 0), (p, n)).copy_from(&block);
        }
        Ok(jac)
    }

    /// `F^{u_{N-2}} ∘ … ∘ F^{u_0}(w)`, i.e. the newest state in the window
    /// given its oldest one. Identity for `N = 1`.
    pub fn propagate(&self, w: &Vector) -> Result<Vector> {
        self.check(w)?;
        let mut z = w.clone();
        for u in &self.inputs {
            z = self.system.step(&z, u)?;
        }
        Ok(z)
    }
}

//! Discrete-time system models `x_{k+1} = F(x_k, u_k)`, `y_k = h(x_k)`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::inf_norm;
use crate::{Matrix, Vector};

pub type DynamicsFn = Arc<dyn Fn(&Vector, &Vector) -> Vector + Send + Sync>;
pub type OutputFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type DynamicsJacobianFn = Arc<dyn Fn(&Vector, &Vector) -> Matrix + Send + Sync>;
pub type OutputJacobianFn = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;

/// Relative step used whenever a Jacobian has to be differenced.
pub const FD_RELATIVE_STEP: f64 = 1e-5;

/// Step size `1e-5·(1 + ‖x‖∞)` for the finite-difference fallback.
pub fn fallback_step(x: &Vector) -> f64 {
    FD_RELATIVE_STEP * (1.0 + inf_norm(x))
}

/// A discrete-time nonlinear system with optional analytic Jacobians.
///
/// Autonomous systems use `m = 0`; their inputs are zero-length vectors.
#[derive(Clone)]
pub struct SystemModel {
    name: String,
    n: usize,
    m: usize,
    p: usize,
    dynamics: DynamicsFn,
    output: OutputFn,
    dynamics_jacobian: Option<DynamicsJacobianFn>,
    output_jacobian: Option<OutputJacobianFn>,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("p", &self.p)
            .field("analytic_dynamics_jacobian", &self.dynamics_jacobian.is_some())
            .field("analytic_output_jacobian", &self.output_jacobian.is_some())
            .finish()
    }
}

impl SystemModel {
    pub fn new<F, H>(name: impl Into<String>, n: usize, m: usize, p: usize, dynamics: F, output: H) -> Result<Self>
    where
        F: Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
        H: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        if n == 0 {
            return Err(Error::Config("state dimension n must be positive".into()));
        }
        if p == 0 {
            return Err(Error::Config("output dimension p must be positive".into()));
        }
        Ok(SystemModel {
            name: name.into(),
            n,
            m,
            p,
            dynamics: Arc::new(dynamics),
            output: Arc::new(output),
            dynamics_jacobian: None,
            output_jacobian: None,
        })
    }

    /// Supplies `∂F/∂x` (n×n).
    pub fn with_dynamics_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&Vector, &Vector) -> Matrix + Send + Sync + 'static,
    {
        self.dynamics_jacobian = Some(Arc::new(jac));
        self
    }

    /// Supplies `∂h/∂x` (p×n).
    pub fn with_output_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&Vector) -> Matrix + Send + Sync + 'static,
    {
        self.output_jacobian = Some(Arc::new(jac));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn output_dim(&self) -> usize {
        self.p
    }

    pub fn is_autonomous(&self) -> bool {
        self.m == 0
    }

    pub fn has_analytic_jacobians(&self) -> bool {
        self.dynamics_jacobian.is_some() && self.output_jacobian.is_some()
    }

    /// The zero-length input used for autonomous systems.
    pub fn empty_input(&self) -> Vector {
        Vector::zeros(self.m)
    }

    fn check_state(&self, x: &Vector, context: &str) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::dimension(context, self.n, x.len()));
        }
        Ok(())
    }

    fn check_input(&self, u: &Vector, context: &str) -> Result<()> {
        if u.len() != self.m {
            return Err(Error::dimension(context, self.m, u.len()));
        }
        Ok(())
    }

    /// `F(x, u)`.
    pub fn step(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        self.check_state(x, "dynamics state argument")?;
        self.check_input(u, "dynamics input argument")?;
        let next = (self.dynamics)(x, u);
        if next.len() != self.n {
            return Err(Error::dimension(format!("dynamics result of {}", self.name), self.n, next.len()));
        }
        Ok(next)
    }

    /// `h(x)`.
    pub fn output(&self, x: &Vector) -> Result<Vector> {
        self.check_state(x, "output state argument")?;
        let y = (self.output)(x);
        if y.len() != self.p {
            return Err(Error::dimension(format!("output result of {}", self.name), self.p, y.len()));
        }
        Ok(y)
    }

    /// `∂F/∂x` at `(x, u)`, analytic when supplied, otherwise central differences.
    pub fn dynamics_jacobian(&self, x: &Vector, u: &Vector) -> Result<Matrix> {
        self.check_state(x, "dynamics Jacobian state argument")?;
        self.check_input(u, "dynamics Jacobian input argument")?;
        match &self.dynamics_jacobian {
            Some(jac) => {
                let j = jac(x, u);
                if j.shape() != (self.n, self.n) {
                    return Err(Error::dimension("dynamics Jacobian rows*cols", self.n * self.n, j.len()));
                }
                Ok(j)
            }
            None => fd_jacobian(|z| (self.dynamics)(z, u), x, fallback_step(x)),
        }
    }

    /// `∂h/∂x` at `x`, analytic when supplied, otherwise central differences.
    pub fn output_jacobian(&self, x: &Vector) -> Result<Matrix> {
        self.check_state(x, "output Jacobian state argument")?;
        match &self.output_jacobian {
            Some(jac) => {
                let j = jac(x);
                if j.shape() != (self.p, self.n) {
                    return Err(Error::dimension("output Jacobian rows*cols", self.p * self.n, j.len()));
                }
                Ok(j)
            }
            None => fd_jacobian(|z| (self.output)(z), x, fallback_step(x)),
        }
    }

    /// Normalizes an input list: autonomous systems accept an empty list and
    /// get `len` zero-length inputs back.
    pub fn expand_inputs(&self, inputs: &[Vector], len: usize, context: &str) -> Result<Vec<Vector>> {
        if self.m == 0 && inputs.is_empty() {
            return Ok(vec![self.empty_input(); len]);
        }
        if inputs.len() < len {
            return Err(Error::dimension(format!("{context} (number of inputs)"), len, inputs.len()));
        }
        for u in &inputs[..len] {
            self.check_input(u, context)?;
        }
        Ok(inputs[..len].to_vec())
    }
}

/// Index-aligned states, inputs and outputs of a simulated run.
///
/// `inputs[k]` drives `states[k]` to `states[k + 1]`, so there is one fewer
/// input than states.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub outputs: Vec<Vector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Rolls the system forward `steps` times from `x0`.
pub fn simulate(system: &SystemModel, x0: &Vector, inputs: &[Vector], steps: usize) -> Result<Trajectory> {
    if x0.len() != system.state_dim() {
        return Err(Error::dimension("initial state", system.state_dim(), x0.len()));
    }
    let inputs = system.expand_inputs(inputs, steps, "simulation inputs")?;
    let mut states = Vec::with_capacity(steps + 1);
    let mut outputs = Vec::with_capacity(steps + 1);
    states.push(x0.clone());
    outputs.push(system.output(x0)?);
    for u in &inputs {
        let next = system.step(states.last().expect("non-empty"), u)?;
        outputs.push(system.output(&next)?);
        states.push(next);
    }
    Ok(Trajectory { states, inputs, outputs })
}

/// Central-difference Jacobian; column `j` is `(f(x + h·eⱼ) − f(x − h·eⱼ)) / 2h`.
pub fn fd_jacobian<F>(f: F, x: &Vector, h: f64) -> Result<Matrix>
where
    F: Fn(&Vector) -> Vector,
{
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::Precondition(format!("finite-difference step must be positive, got {h}")));
    }
    let n = x.len();
    let mut columns: Vec<Vector> = Vec::with_capacity(n);
    let mut rows = None;
    for j in 0..n {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[j] += h;
        minus[j] -= h;
        let fp = f(&plus);
        let fm = f(&minus);
        if fp.iter().chain(fm.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("function value near column {j} of finite-difference Jacobian")));
        }
        if fp.len() != fm.len() || rows.is_some_and(|r| r != fp.len()) {
            return Err(Error::dimension("finite-difference function output", rows.unwrap_or(fp.len()), fm.len()));
        }
        rows = Some(fp.len());
        columns.push((fp - fm) / (2.0 * h));
    }
    let rows = match rows {
        Some(r) => r,
        None => f(x).len(),
    };
    let mut jac = Matrix::zeros(rows, n);
    for (j, col) in columns.iter().enumerate() {
        jac.set_column(j, col);
    }
    Ok(jac)
}

//! The IPG observer: coupled preconditioner / estimate recursions inside each
//! sampling instant, forward propagation of the estimate, and the warm start
//! of the next instant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, checked_inverse, contraction_factor, matrix_finite, spectral_norm};
use crate::observer::{drive, InstantContext, InstantSolver, ObserverRun};
use crate::system::{SystemModel, Trajectory};
use crate::trace::{IterationRecord, RunTrace};
use crate::window::ObservabilityWindow;
use crate::{Matrix, Vector};

/// Multiplier that turns the strict step-size bounds into concrete values.
pub const SAFETY_FACTOR: f64 = 0.99;

/// Any iterate with a larger norm is treated as divergence.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Step-size rule
/// `α⁽ⁱ⁾ = 0.99·min{1/Λ, min{ϱ, D₂}·μⁱ·(1 − μρ) / (2l·(1 − (μρ)ⁱ⁺¹))}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremSchedule {
    /// Upper bound Λ on the largest eigenvalue of `H_x`.
    pub lambda_max: f64,
    /// Lipschitz constant `l` of the observability map.
    pub l: f64,
    pub rho: f64,
    pub mu: f64,
    pub varrho: f64,
    pub d2: f64,
}

impl TheoremSchedule {
    pub fn new(lambda_max: f64, l: f64, rho: f64, mu: f64, varrho: f64, d2: f64) -> Result<Self> {
        let s = TheoremSchedule {
            lambda_max,
            l,
            rho,
            mu,
            varrho,
            d2,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_max, self.l, self.rho, self.mu, self.varrho, self.d2];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("theorem schedule parameters must be finite".into()));
        }
        let checks = [
            (self.lambda_max > 0.0, "Λ > 0"),
            (self.l > 0.0, "l > 0"),
            (self.rho > 0.0 && self.rho < 1.0, "0 < ρ < 1"),
            (self.mu > 1.0, "μ > 1"),
            (self.mu * self.rho < 1.0, "μρ < 1"),
            (self.varrho > 0.0 && self.varrho < 1.0 - self.rho, "0 < ϱ < 1 − ρ"),
            (self.d2 > 0.0, "D₂ > 0"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, what)) => Err(Error::Config(format!("theorem schedule requires {what}: {self:?}"))),
            None => Ok(()),
        }
    }

    /// The bound inside the `0.99·min{…}` before the safety factor.
    pub fn bound(&self, i: usize) -> f64 {
        let mr = self.mu * self.rho;
        let growth = self.mu.powi(i as i32) * (1.0 - mr) / (2.0 * self.l * (1.0 - mr.powi(i as i32 + 1)));
        (1.0 / self.lambda_max).min(self.varrho.min(self.d2) * growth)
    }

    pub fn step_size(&self, i: usize) -> f64 {
        SAFETY_FACTOR * self.bound(i)
    }
}

/// Step-size policy for the preconditioner update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaSchedule {
    Constant { value: f64 },
    Theorem(TheoremSchedule),
    /// Explicit `α⁽⁰⁾, α⁽¹⁾, …`; must cover every inner iteration.
    Custom { values: Vec<f64> },
}

impl AlphaSchedule {
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            AlphaSchedule::Constant { value } => {
                if !(value.is_finite() && *value > 0.0) {
                    return Err(Error::Config(format!("constant step size must be positive, got {value}")));
                }
            }
            AlphaSchedule::Theorem(s) => s.validate()?,
            AlphaSchedule::Custom { values } => {
                if values.len() < d {
                    return Err(Error::Config(format!(
                        "custom step-size list has {} entries, need d = {d}",
                        values.len()
                    )));
                }
                if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                    return Err(Error::Config(format!("custom step sizes must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// `α⁽ⁱ⁾`. Custom lists repeat their last entry past their end.
    pub fn step_size(&self, i: usize) -> f64 {
        match self {
            AlphaSchedule::Constant { value } => *value,
            AlphaSchedule::Theorem(s) => s.step_size(i),
            AlphaSchedule::Custom { values } => values[i.min(values.len() - 1)],
        }
    }
}

/// Free-function form of [`AlphaSchedule::step_size`].
pub fn step_size(i: usize, policy: &AlphaSchedule) -> f64 {
    policy.step_size(i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpgConfig {
    /// Inner iterations per sampling instant.
    pub d: usize,
    pub alpha: AlphaSchedule,
    /// Gradient step `δ`.
    pub delta_step: f64,
    /// Eigenvalue shift `β` in the preconditioner update; 0 is plain IPG.
    pub beta: f64,
    pub w_init: Vector,
    pub k_init: Matrix,
}

impl IpgConfig {
    pub fn new(d: usize, alpha: AlphaSchedule, w_init: Vector, k_init: Matrix) -> Self {
        IpgConfig {
            d,
            alpha,
            delta_step: 1.0,
            beta: 0.0,
            w_init,
            k_init,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_delta_step(mut self, delta_step: f64) -> Self {
        self.delta_step = delta_step;
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        if !(self.delta_step.is_finite() && self.delta_step > 0.0) {
            return Err(Error::Config(format!("delta_step must be positive, got {}", self.delta_step)));
        }
        if self.w_init.len() != n {
            return Err(Error::dimension("w_init", n, self.w_init.len()));
        }
        if self.k_init.shape() != (n, n) {
            return Err(Error::dimension("K_init rows*cols", n * n, self.k_init.len()));
        }
        self.alpha.validate(self.d)
    }
}

/// Observer state inside instant `k` after `i` inner iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct IpgState {
    /// Estimate of `x_{k−N+1}`.
    pub w: Vector,
    /// Preconditioner, driven toward `H_x⁻¹`.
    pub k_mat: Matrix,
    pub k: usize,
    pub i: usize,
    /// Propagated estimate of `x_k`, set once the instant is finished.
    pub x_hat: Option<Vector>,
}

impl IpgState {
    pub fn new(w: Vector, k_mat: Matrix, k: usize) -> Self {
        IpgState {
            w,
            k_mat,
            k,
            i: 0,
            x_hat: None,
        }
    }

    /// Sets `x̂` to the forward propagation of the current `w`.
    pub fn finalize(&mut self, window: &ObservabilityWindow) -> Result<()> {
        self.x_hat = Some(propagate_estimate(&self.w, window)?);
        Ok(())
    }
}

fn diverged(k: usize, i: usize, reason: impl Into<String>) -> Error {
    Error::Divergence {
        k,
        i,
        reason: reason.into(),
    }
}

/// One inner iteration, also returning `H_x(w^(i))`.
fn inner_step_with_jacobian(
    state: &IpgState,
    y: &Vector,
    window: &ObservabilityWindow,
    alpha: f64,
    delta_step: f64,
    beta: f64,
) -> Result<(IpgState, Matrix)> {
    let n = window.dim();
    if y.len() != n {
        return Err(Error::dimension("stacked measurements", n, y.len()));
    }
    if state.w.len() != n {
        return Err(Error::dimension("estimate w", n, state.w.len()));
    }
    if state.k_mat.shape() != (n, n) {
        return Err(Error::dimension("preconditioner rows*cols", n * n, state.k_mat.len()));
    }
    let locate = |e: Error| match e {
        Error::NonFinite(what) => diverged(state.k, state.i, what),
        other => other,
    };
    let jac = window.jacobian(&state.w).map_err(locate)?;
    let residual = window.evaluate(&state.w).map_err(locate)? - y;

    let identity = Matrix::identity(n, n);
    let shifted = &jac + &identity * beta;
    // both updates read the pre-update (K, w)
    let k_next = &state.k_mat - (&shifted * &state.k_mat - &identity) * alpha;
    let w_next = &state.w - (&state.k_mat * residual) * delta_step;

    if !matrix_finite(&k_next) {
        return Err(diverged(state.k, state.i, "non-finite preconditioner"));
    }
    if !all_finite(&w_next) {
        return Err(diverged(state.k, state.i, "non-finite estimate"));
    }
    if w_next.norm() > DIVERGENCE_NORM {
        return Err(diverged(state.k, state.i, format!("‖w‖ = {:e} exceeds {DIVERGENCE_NORM:e}", w_next.norm())));
    }
    let next = IpgState {
        w: w_next,
        k_mat: k_next,
        k: state.k,
        i: state.i + 1,
        x_hat: None,
    };
    Ok((next, jac))
}

/// One IPG iteration:
/// `K′ = K − α·((H_x(w) + β·I)·K − I)`, `w′ = w − δ·K·(H(w) − Y)`,
/// where the `w` update uses the pre-update `K`.
pub fn ipg_inner_step(
    state: &IpgState,
    y: &Vector,
    window: &ObservabilityWindow,
    alpha: f64,
    delta_step: f64,
    beta: f64,
) -> Result<IpgState> {
    inner_step_with_jacobian(state, y, window, alpha, delta_step, beta).map(|(s, _)| s)
}

/// `x̂ = F^{u_{k−1}} ∘ … ∘ F^{u_{k−N+1}}(w_d)`.
pub fn propagate_estimate(w_d: &Vector, window: &ObservabilityWindow) -> Result<Vector> {
    window.propagate(w_d)
}

/// Warm start of the next instant: `w ← F^{u}(w)`, `K` carried over,
/// `k ← k + 1`, `i ← 0`. `input` is the oldest input of the finished window,
/// `None` for autonomous systems.
pub fn advance_window(state: &IpgState, system: &SystemModel, input: Option<&Vector>) -> Result<IpgState> {
    let w = match input {
        Some(u) => system.step(&state.w, u)?,
        None => system.step(&state.w, &system.empty_input())?,
    };
    Ok(IpgState {
        w,
        k_mat: state.k_mat.clone(),
        k: state.k + 1,
        i: 0,
        x_hat: None,
    })
}

struct IpgSolver<'a> {
    config: &'a IpgConfig,
    k_mat: Matrix,
}

impl InstantSolver for IpgSolver<'_> {
    fn solve(&mut self, w: Vector, ctx: &InstantContext<'_>, trace: &mut RunTrace) -> Result<Vector> {
        let target_inverse = match ctx.truth_start {
            Some(x) => checked_inverse(&ctx.window.jacobian(x)?).ok(),
            None => None,
        };
        let n = ctx.window.dim();
        let mut state = IpgState::new(w, self.k_mat.clone(), ctx.k);
        for i in 0..self.config.d {
            let alpha = self.config.alpha.step_size(i);
            let (next, jac) = inner_step_with_jacobian(
                &state,
                ctx.measurements,
                ctx.window,
                alpha,
                self.config.delta_step,
                self.config.beta,
            )?;
            let residual_jac = ctx.window.jacobian(&next.w).map_err(|e| match e {
                Error::NonFinite(what) => diverged(ctx.k, i, what),
                other => other,
            })?;
            let precond_residual = spectral_norm(&(residual_jac * &next.k_mat - Matrix::identity(n, n)));
            trace.push_iteration(IterationRecord {
                k: ctx.k,
                i,
                alpha: Some(alpha),
                err_w: ctx.truth_start.map(|x| (&next.w - x).norm()),
                precond_residual: Some(precond_residual),
                err_k: target_inverse.as_ref().map(|inv| spectral_norm(&(&next.k_mat - inv))),
                contraction: Some(contraction_factor(alpha, &jac, self.config.beta)),
            });
            state = next;
        }
        self.k_mat = state.k_mat;
        Ok(state.w)
    }

    fn preconditioner(&self) -> Option<&Matrix> {
        Some(&self.k_mat)
    }
}

/// Runs the IPG observer over `measurements` (`y_1, y_2, …`).
///
/// `inputs[j]` drives `x_{j+1}` to `x_{j+2}`; pass an empty list for
/// autonomous systems. The window length is `n / p`. With `truth`, the trace
/// carries the error columns. A divergence stops the run and is reported in
/// [`ObserverRun::failure`] alongside the partial trace.
pub fn run_ipg_observer(
    system: &SystemModel,
    measurements: &[Vector],
    inputs: &[Vector],
    config: &IpgConfig,
    truth: Option<&Trajectory>,
) -> Result<ObserverRun> {
    let window_n = window_length(system)?;
    config.validate(system.state_dim())?;
    let mut solver = IpgSolver {
        config,
        k_mat: config.k_init.clone(),
    };
    drive(system, window_n, measurements, inputs, truth, &config.w_init, &mut solver)
}

/// `N = n / p`; errors when `p` does not divide `n`.
pub fn window_length(system: &SystemModel) -> Result<usize> {
    let (n, p) = (system.state_dim(), system.output_dim());
    if n % p != 0 {
        return Err(Error::NonSquareWindow { n, rows: p * n.div_ceil(p) });
    }
    Ok(n / p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::simulate;
    use approx::assert_relative_eq;

    fn scalar(analytic: bool) -> SystemModel {
        let s = SystemModel::new("halving", 1, 0, 1, |x, _| x * 0.5, |x| x.clone()).unwrap();
        if analytic {
            s.with_dynamics_jacobian(|_, _| Matrix::from_element(1, 1, 0.5))
                .with_output_jacobian(|_| Matrix::from_element(1, 1, 1.0))
        } else {
            s
        }
    }

    fn doubling_output() -> SystemModel {
        SystemModel::new("h2", 1, 0, 1, |x, _| x.clone(), |x| x * 2.0)
            .unwrap()
            .with_dynamics_jacobian(|_, _| Matrix::from_element(1, 1, 1.0))
            .with_output_jacobian(|_| Matrix::from_element(1, 1, 2.0))
    }

    fn swap_scale() -> SystemModel {
        SystemModel::new(
            "swap_scale",
            2,
            0,
            1,
            |x, _| Vector::from_vec(vec![x[1], 0.9 * x[0]]),
            |x| Vector::from_element(1, x[0]),
        )
        .unwrap()
        .with_dynamics_jacobian(|_, _| Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.9, 0.0]))
        .with_output_jacobian(|_| Matrix::from_row_slice(1, 2, &[1.0, 0.0]))
    }

    fn s(v: f64) -> Vector {
        Vector::from_element(1, v)
    }

    fn m(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn inner_step_uses_pre_update_preconditioner() {
        let win = ObservabilityWindow::new(scalar(true), 1, &[]).unwrap();
        let st = IpgState::new(s(2.0), m(0.0), 1);
        let next = ipg_inner_step(&st, &s(1.0), &win, 0.5, 1.0, 0.0).unwrap();
        assert_eq!(next.k_mat[(0, 0)], 0.5);
        // with K^(i+1) the estimate would have moved to 1.5
        assert_eq!(next.w[0], 2.0);
        assert_eq!(next.i, 1);
    }

    #[test]
    fn inner_step_exact_preconditioner_is_newton() {
        let win = ObservabilityWindow::new(scalar(true), 1, &[]).unwrap();
        let st = IpgState::new(s(2.0), m(1.0), 1);
        let next = ipg_inner_step(&st, &s(1.0), &win, 0.5, 1.0, 0.0).unwrap();
        assert_eq!(next.k_mat[(0, 0)], 1.0);
        assert_eq!(next.w[0], 1.0);
    }

    #[test]
    fn preconditioner_geometric_approach() {
        let win = ObservabilityWindow::new(doubling_output(), 1, &[]).unwrap();
        let y = win.evaluate(&s(0.3)).unwrap();
        let mut st = IpgState::new(s(0.3), m(0.0), 1);
        for _ in 0..3 {
            st = ipg_inner_step(&st, &y, &win, 0.25, 1.0, 0.0).unwrap();
        }
        // independent loop of the scalar recursion K ← K − α(2K − 1)
        let mut k = 0.0_f64;
        for _ in 0..3 {
            k -= 0.25 * (2.0 * k - 1.0);
        }
        assert_eq!(k, 0.4375);
        assert_relative_eq!(st.k_mat[(0, 0)], 0.4375, epsilon = 1e-15);
    }

    #[test]
    fn beta_shift_changes_preconditioner_fixed_point() {
        let win = ObservabilityWindow::new(doubling_output(), 1, &[]).unwrap();
        let y = win.evaluate(&s(0.0)).unwrap();
        let mut st = IpgState::new(s(0.0), m(0.0), 1);
        for _ in 0..200 {
            st = ipg_inner_step(&st, &y, &win, 0.3, 1.0, 0.5).unwrap();
        }
        assert_relative_eq!(st.k_mat[(0, 0)], 1.0 / 2.5, epsilon = 1e-12);
    }

    #[test]
    fn inner_step_rejects_wrong_measurement_length() {
        let win = ObservabilityWindow::new(scalar(true), 1, &[]).unwrap();
        let st = IpgState::new(s(2.0), m(0.0), 1);
        assert!(matches!(
            ipg_inner_step(&st, &Vector::zeros(2), &win, 0.5, 1.0, 0.0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn inner_step_reports_divergence_location() {
        let win = ObservabilityWindow::new(scalar(true), 1, &[]).unwrap();
        let mut st = IpgState::new(s(1e11), m(-100.0), 7);
        st.i = 3;
        let err = ipg_inner_step(&st, &s(0.0), &win, 0.5, 1.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::Divergence { k: 7, i: 3, .. }), "{err:?}");
    }

    #[test]
    fn propagate_examples() {
        let win = ObservabilityWindow::new(scalar(true), 1, &[]).unwrap();
        assert_eq!(propagate_estimate(&s(7.0), &win).unwrap(), s(7.0));
        let sys2 = SystemModel::new("halving2", 2, 0, 1, |x, _| x * 0.5, |x| Vector::from_element(1, x[0] + x[1])).unwrap();
        let win2 = ObservabilityWindow::new(sys2, 2, &[]).unwrap();
        let z = propagate_estimate(&Vector::from_vec(vec![4.0, 4.0]), &win2).unwrap();
        assert_eq!(z, Vector::from_vec(vec![2.0, 2.0]));
        let lifted = SystemModel::new(
            "lifted",
            3,
            0,
            1,
            |x, _| Vector::from_vec(vec![x[1], 0.9 * x[0], x[2]]),
            |x| Vector::from_element(1, x[0] + x[2]),
        )
        .unwrap();
        let win3 = ObservabilityWindow::new(lifted, 3, &[]).unwrap();
        let z = propagate_estimate(&Vector::from_vec(vec![1.0, 0.0, 0.0]), &win3).unwrap();
        assert_eq!(z, Vector::from_vec(vec![0.9, 0.0, 0.0]));
    }

    #[test]
    fn advance_examples() {
        let st = IpgState::new(s(4.0), m(0.9), 3);
        let next = advance_window(&st, &scalar(true), None).unwrap();
        assert_eq!(next.w, s(2.0));
        assert_eq!(next.k_mat, m(0.9));
        assert_eq!((next.k, next.i), (4, 0));

        let ident = SystemModel::new("id", 1, 0, 1, |x, _| x.clone(), |x| x.clone()).unwrap();
        let next = advance_window(&st, &ident, None).unwrap();
        assert_eq!(next.w, st.w);
        assert_eq!(next.k_mat, st.k_mat);

        let st = IpgState::new(Vector::from_vec(vec![2.0, 1.0]), Matrix::identity(2, 2), 2);
        let next = advance_window(&st, &swap_scale(), None).unwrap();
        assert_eq!(next.w, Vector::from_vec(vec![1.0, 1.8]));
        assert_eq!(next.k_mat, Matrix::identity(2, 2));
    }

    #[test]
    fn constant_schedule() {
        let p = AlphaSchedule::Constant { value: 0.3 };
        assert!((0..10).all(|i| step_size(i, &p) == 0.3));
    }

    #[test]
    fn theorem_schedule_dominated_by_lambda() {
        let sched = TheoremSchedule::new(2.0, 1e-3, 0.5, 1.5, 0.4, 10.0).unwrap();
        assert_relative_eq!(sched.step_size(0), 0.495, epsilon = 1e-15);
    }

    #[test]
    fn theorem_schedule_first_step() {
        let sched = TheoremSchedule::new(1.0, 1.0, 0.5, 1.5, 0.4, 10.0).unwrap();
        // 0.99 · min{1, 0.4·1·(1 − 0.75) / (2·1·(1 − 0.75))}
        let independent = 0.99 * f64::min(1.0, 0.4 * 0.25 / (2.0 * 0.25));
        assert_relative_eq!(independent, 0.198, epsilon = 1e-15);
        assert_relative_eq!(sched.step_size(0), 0.198, epsilon = 1e-15);
        // μⁱ(1 − μρ)/(1 − (μρ)ⁱ⁺¹) dips at i = 1 and then grows past the 1/Λ cap
        assert_relative_eq!(sched.step_size(1), 0.99 * 0.4 * 1.5 * 0.25 / (2.0 * (1.0 - 0.75 * 0.75)), epsilon = 1e-15);
        assert_relative_eq!(sched.step_size(60), 0.99, epsilon = 1e-12);
    }

    #[test]
    fn theorem_schedule_rejects_bad_parameters() {
        assert!(TheoremSchedule::new(1.0, 1.0, 0.5, 2.5, 0.4, 1.0).is_err()); // μρ ≥ 1
        assert!(TheoremSchedule::new(1.0, 1.0, 0.5, 1.5, 0.6, 1.0).is_err()); // ϱ ≥ 1 − ρ
        assert!(TheoremSchedule::new(0.0, 1.0, 0.5, 1.5, 0.4, 1.0).is_err());
        assert!(TheoremSchedule::new(1.0, 1.0, 0.5, 1.0, 0.4, 1.0).is_err());
        assert!(TheoremSchedule::new(1.0, 1.0, 0.5, 1.5, 0.4, 0.0).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = IpgConfig::new(2, AlphaSchedule::Constant { value: 0.5 }, s(0.0), m(1.0));
        assert!(ok.validate(1).is_ok());
        assert!(IpgConfig { d: 0, ..ok.clone() }.validate(1).is_err());
        assert!(ok.clone().with_beta(-1.0).validate(1).is_err());
        assert!(ok.validate(2).is_err());
        let short = IpgConfig::new(3, AlphaSchedule::Custom { values: vec![0.1, 0.2] }, s(0.0), m(1.0));
        assert!(short.validate(1).is_err());
        assert!(IpgConfig::new(1, AlphaSchedule::Constant { value: 0.0 }, s(0.0), m(1.0)).validate(1).is_err());
    }

    #[test]
    fn run_from_truth_stays_exact() {
        let sys = scalar(true);
        let traj = simulate(&sys, &s(3.0), &[], 30).unwrap();
        let cfg = IpgConfig::new(20, AlphaSchedule::Constant { value: 0.5 }, s(3.0), m(1.0));
        let run = run_ipg_observer(&sys, &traj.outputs, &[], &cfg, Some(&traj)).unwrap();
        assert!(run.completed());
        assert_eq!(run.estimates.len(), 31);
        for (est, x) in run.estimates.iter().zip(&traj.states) {
            assert_eq!(est.x_hat, *x);
        }
    }

    #[test]
    fn run_linear_exact_after_first_step() {
        let sys = scalar(true);
        let traj = simulate(&sys, &s(3.0), &[], 10).unwrap();
        let cfg = IpgConfig::new(1, AlphaSchedule::Constant { value: 0.5 }, s(4.0), m(1.0));
        let run = run_ipg_observer(&sys, &traj.outputs, &[], &cfg, Some(&traj)).unwrap();
        let first = &run.trace.iterations[0];
        assert_eq!(first.err_w, Some(0.0));
        assert!(run.trace.estimate_errors().iter().all(|e| *e == Some(0.0)));
    }

    #[test]
    fn run_planar_errors_decay() {
        let sys = swap_scale();
        let traj = simulate(&sys, &Vector::from_vec(vec![1.0, -0.5]), &[], 30).unwrap();
        let w0 = &traj.states[0] + Vector::from_vec(vec![0.1, 0.1]);
        let cfg = IpgConfig::new(1, AlphaSchedule::Constant { value: 0.5 }, w0, Matrix::identity(2, 2) * 0.5);
        let run = run_ipg_observer(&sys, &traj.outputs, &[], &cfg, Some(&traj)).unwrap();
        assert!(run.trace.is_well_formed());
        let errs: Vec<f64> = run.trace.estimate_errors().into_iter().map(Option::unwrap).collect();
        assert_eq!(run.estimates[0].k, 2);
        let usable: Vec<f64> = errs.iter().copied().take_while(|e| *e > 1e-12).collect();
        assert!(usable.len() >= 2);
        assert!(usable.windows(2).all(|w| w[1] < w[0]));
        assert!(*errs.last().unwrap() < 1e-12);
    }

    #[test]
    fn run_rejects_short_measurements_and_bad_dims() {
        let sys = swap_scale();
        let cfg = IpgConfig::new(1, AlphaSchedule::Constant { value: 0.5 }, Vector::zeros(2), Matrix::identity(2, 2));
        assert!(matches!(
            run_ipg_observer(&sys, &[s(1.0)], &[], &cfg, None),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            run_ipg_observer(&sys, &[Vector::zeros(2), Vector::zeros(2)], &[], &cfg, None),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn run_without_truth_has_empty_error_columns() {
        let sys = scalar(true);
        let traj = simulate(&sys, &s(3.0), &[], 5).unwrap();
        let cfg = IpgConfig::new(2, AlphaSchedule::Constant { value: 0.5 }, s(2.0), m(0.5));
        let run = run_ipg_observer(&sys, &traj.outputs, &[], &cfg, None).unwrap();
        assert!(run.trace.iterations.iter().all(|r| r.err_w.is_none() && r.err_k.is_none()));
        assert!(run.trace.instants.iter().all(|r| r.err_xhat.is_none()));
        assert!(run.trace.iterations.iter().all(|r| r.precond_residual.is_some()));
    }

    #[test]
    fn divergence_keeps_partial_trace() {
        // h(x) = -x makes K ← K − α(−K − 1) grow without bound
        let sys = SystemModel::new("flip", 1, 0, 1, |x, _| x * 1.5, |x| -x)
            .unwrap()
            .with_dynamics_jacobian(|_, _| Matrix::from_element(1, 1, 1.5))
            .with_output_jacobian(|_| Matrix::from_element(1, 1, -1.0));
        let traj = simulate(&sys, &s(1.0), &[], 200).unwrap();
        let cfg = IpgConfig::new(5, AlphaSchedule::Constant { value: 0.9 }, s(2.0), m(0.0));
        let run = run_ipg_observer(&sys, &traj.outputs, &[], &cfg, Some(&traj)).unwrap();
        assert!(matches!(run.failure, Some(Error::Divergence { .. })), "{:?}", run.failure);
        assert!(!run.trace.iterations.is_empty());
        assert!(run.trace.iterations.iter().all(|r| r.contraction.unwrap() > 1.0));
    }
}

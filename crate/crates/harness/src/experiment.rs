//! End-to-end experiment: simulate the truth, estimate constants, run the
//! observer, audit the convergence conditions, fit the rate and persist.

use std::fmt::Write as _;
use std::path::Path;

use ipg_core::linalg::{checked_inverse, spectral_norm};
use ipg_core::{
    check_theorem_conditions, estimate_constants, measure_rho, run_ipg_observer, run_newton_observer, sampled_rho,
    simulate, step_mismatch_sequence, AlphaSchedule, AuditInputs, ConditionReport, ConstantsReport, IpgConfig, Matrix,
    NewtonConfig, ObservabilityWindow, ObserverRun, Region, RhoReport, RunTrace, SystemModel, TheoremSchedule,
    Trajectory, Vector,
};
use serde::{Deserialize, Serialize};

use crate::config::{AlphaSpec, ExperimentConfig, Format, ObserverKind};
use crate::error::{HarnessError, Result};
use crate::rate::{fit_linear_rate, RateFit};
use crate::systems::builtin_system;

/// Errors at or below this count as converged for the decrease verdict.
pub const CONVERGED_ERROR: f64 = 1e-10;

/// Relative slack allowed between the fitted rate and the audited `μ`.
pub const RATE_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl VerdictEntry {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        VerdictEntry {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub system: String,
    pub observer: ObserverKind,
    pub seed: u64,
    pub window_n: usize,
    pub d: usize,
    /// Eigenvalue shift used (0 for plain IPG, absent for Newton).
    pub beta: Option<f64>,
    /// `α⁽⁰⁾ … α⁽ᵈ⁻¹⁾` (IPG only).
    pub alpha: Vec<f64>,
    pub constants: ConstantsReport,
    pub conditions: Option<ConditionReport>,
    pub rho: Option<RhoReport>,
    pub fitted_mu: Option<f64>,
    pub fit: Option<RateFit>,
    /// `‖x̂_k − x_k‖` for `k = N, N+1, …`.
    pub errors: Vec<f64>,
    pub final_error: Option<f64>,
    /// `‖K − H_x(x)⁻¹‖` after the last completed iteration (IPG only).
    pub final_precond_error: Option<f64>,
    pub failure: Option<String>,
    pub diverged: bool,
    pub verdicts: Vec<VerdictEntry>,
    #[serde(skip)]
    pub trace: RunTrace,
}

impl ExperimentResult {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn verdict(&self, name: &str) -> Option<&VerdictEntry> {
        self.verdicts.iter().find(|v| v.name == name)
    }
}

/// Model, truth and sampled constants shared by `run` and `audit`.
struct Setup {
    system: SystemModel,
    window_n: usize,
    truth: Trajectory,
    first_window: ObservabilityWindow,
    region: Region,
    constants: ConstantsReport,
    w_init: Vector,
}

pub fn build_system(cfg: &ExperimentConfig) -> Result<SystemModel> {
    builtin_system(&cfg.system.id, &cfg.system.params)
}

/// The true trajectory `x_1 … x_T` with its measurements.
pub fn simulate_truth(cfg: &ExperimentConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let system = build_system(cfg)?;
    Ok(simulate(&system, &cfg.truth_x0(), &[], cfg.horizon - 1)?)
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let system = build_system(cfg)?;
    let window_n = system.state_dim() / system.output_dim();
    let truth = simulate(&system, &cfg.truth_x0(), &[], cfg.horizon - 1)?;
    let first_window = ObservabilityWindow::new(system.clone(), window_n, &truth.inputs[..window_n - 1])?;
    let region = Region::new(
        Vector::from_row_slice(&cfg.region.lower),
        Vector::from_row_slice(&cfg.region.upper),
        cfg.region.samples,
        cfg.region.seed.unwrap_or(cfg.seed),
    )?;
    let mut constants = estimate_constants(&first_window, &region)?;
    constants.c_seq = step_mismatch_sequence(&system, &truth)?;
    let x1 = cfg.truth_x0();
    let w_init = match (&cfg.observer.w_init, &cfg.observer.w_offset) {
        (Some(w), _) => Vector::from_row_slice(w),
        (None, Some(off)) => &x1 + Vector::from_row_slice(off),
        (None, None) => x1,
    };
    Ok(Setup {
        system,
        window_n,
        truth,
        first_window,
        region,
        constants,
        w_init,
    })
}

fn resolve_beta(cfg: &ExperimentConfig, constants: &ConstantsReport) -> f64 {
    match cfg.observer.kind {
        ObserverKind::IpgBeta => cfg.observer.beta.unwrap_or(constants.beta_required),
        _ => 0.0,
    }
}

fn resolve_alpha(cfg: &ExperimentConfig, constants: &ConstantsReport, beta: f64) -> Result<AlphaSchedule> {
    let schedule = match cfg.observer.alpha.clone().unwrap_or(AlphaSpec::LambdaFraction {
        fraction: ipg_core::ipg::SAFETY_FACTOR,
    }) {
        AlphaSpec::Constant { value } => AlphaSchedule::Constant { value },
        AlphaSpec::Custom { values } => AlphaSchedule::Custom { values },
        AlphaSpec::LambdaFraction { fraction } => AlphaSchedule::Constant {
            value: fraction / (constants.lambda_max + beta),
        },
        AlphaSpec::Theorem {
            rho,
            mu,
            varrho,
            d2,
            lambda_max,
            l,
        } => AlphaSchedule::Theorem(TheoremSchedule::new(
            lambda_max.unwrap_or(constants.lambda_max),
            l.unwrap_or(constants.lipschitz_map),
            rho,
            mu,
            varrho,
            d2,
        )?),
    };
    schedule.validate(cfg.observer.d)?;
    Ok(schedule)
}

fn ipg_config(cfg: &ExperimentConfig, s: &Setup) -> Result<IpgConfig> {
    let n = s.system.state_dim();
    let beta = resolve_beta(cfg, &s.constants);
    let alpha = resolve_alpha(cfg, &s.constants, beta)?;
    let k_init = match cfg.observer.k_init.explicit(n)? {
        Some(k) => k,
        None => inverse_at(&s.first_window, &s.truth.states[0])?,
    };
    let config = IpgConfig::new(cfg.observer.d, alpha, s.w_init.clone(), k_init)
        .with_beta(beta)
        .with_delta_step(cfg.observer.delta_step);
    config.validate(n)?;
    Ok(config)
}

fn inverse_at(window: &ObservabilityWindow, x: &Vector) -> Result<Matrix> {
    let jac = window.jacobian(x)?;
    checked_inverse(&jac).map_err(|cond| HarnessError::Core(ipg_core::Error::SingularJacobian {
        condition: cond,
        w: x.iter().copied().collect(),
    }))
}

fn run_observer(cfg: &ExperimentConfig, s: &Setup, measurements: &[Vector]) -> Result<(ObserverRun, Option<IpgConfig>)> {
    match cfg.observer.kind {
        ObserverKind::Ipg | ObserverKind::IpgBeta => {
            let config = ipg_config(cfg, s)?;
            let run = run_ipg_observer(&s.system, measurements, &[], &config, Some(&s.truth))?;
            Ok((run, Some(config)))
        }
        ObserverKind::Newton => {
            let mut config = NewtonConfig::new(cfg.observer.d, s.w_init.clone());
            if let Some(damping) = cfg.observer.damping {
                config = config.with_damping(damping);
            }
            let run = run_newton_observer(&s.system, measurements, &[], &config, Some(&s.truth))?;
            Ok((run, None))
        }
    }
}

/// Fills the theorem parameters the user left unset:
/// `μ = ρ^(−1/2)` (the geometric middle of `(1, 1/ρ)`),
/// `ϱ = ½·min{1 − ρ, 1 − 1/μ}`, `D₂` half its upper bound (0 when that is
/// not positive), `δ = ‖w_N⁽⁰⁾ − x_1‖`.
pub fn audit_inputs(
    cfg: &ExperimentConfig,
    constants: &ConstantsReport,
    rho: &RhoReport,
    delta_bar: f64,
    initial_error: f64,
    k0_error: Option<f64>,
) -> AuditInputs {
    let a = &cfg.audit;
    let mu = a.mu.unwrap_or(if rho.rho <= 0.0 {
        2.0
    } else if rho.rho < 1.0 {
        rho.rho.recip().sqrt()
    } else {
        1.0
    });
    let varrho = a.varrho.unwrap_or(0.5 * (1.0 - rho.rho).min(1.0 - 1.0 / mu));
    let delta = a.delta.unwrap_or(initial_error);
    let d2 = a.d2.unwrap_or_else(|| {
        let ratio = if delta > 0.0 {
            constants.lipschitz_dynamics * delta_bar / delta
        } else {
            f64::INFINITY
        };
        let bound = constants.eta * constants.gamma * (1.0 - ratio) / (2.0 * constants.lipschitz_map);
        if bound > 0.0 {
            0.5 * bound
        } else {
            0.0
        }
    });
    AuditInputs {
        rho: rho.rho,
        rho_n: rho.rho_n,
        mu,
        varrho,
        d2,
        delta,
        delta_bar,
        k0_error,
    }
}

fn first_instant_delta_bar(trace: &RunTrace, window_n: usize) -> Option<f64> {
    trace.last_iteration_at(window_n).and_then(|r| r.err_w)
}

/// Runs one experiment and writes its artifacts into `cfg.outputs`.
/// Divergence is recorded in the result rather than returned as an error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let result = execute(cfg)?;
    write_artifacts(&result, cfg, &cfg.outputs)?;
    Ok(result)
}

/// [`run_experiment`] without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let s = setup(cfg)?;
    let (run, ipg) = run_observer(cfg, &s, &s.truth.outputs)?;
    let trace = run.trace;
    let errors: Vec<f64> = trace.estimate_errors().into_iter().flatten().collect();
    let initial_error = (&s.w_init - &s.truth.states[0]).norm();

    let mut rho = None;
    let mut conditions = None;
    if let Some(config) = &ipg {
        rho = measure_rho(&trace).ok();
        let k0_error = inverse_at(&s.first_window, &s.truth.states[0])
            .ok()
            .map(|inv| spectral_norm(&(&config.k_init - inv)));
        if let (Some(r), Some(delta_bar)) = (&rho, first_instant_delta_bar(&trace, s.window_n)) {
            let inputs = audit_inputs(cfg, &s.constants, r, delta_bar, initial_error, k0_error);
            conditions = Some(check_theorem_conditions(&s.constants, config, &inputs)?);
        }
    }

    let fit = fit_linear_rate(&errors).ok();
    let final_precond_error = trace.iterations.last().and_then(|r| r.err_k);
    let failure = run.failure.as_ref().map(|e| e.to_string());

    let mut verdicts = vec![VerdictEntry::new(
        "completed",
        run.failure.is_none(),
        failure.clone().unwrap_or_else(|| format!("{} instants estimated", run.estimates.len())),
    )];
    if ipg.is_some() {
        verdicts.push(match &rho {
            Some(r) => VerdictEntry::new(
                "contraction",
                r.contraction_holds,
                format!("rho = {:e}, rho_N = {:e}", r.rho, r.rho_n),
            ),
            None => VerdictEntry::new("contraction", false, "no contraction factors recorded"),
        });
    }
    verdicts.push(match (errors.first(), errors.last()) {
        (Some(&first), Some(&last)) => VerdictEntry::new(
            "error_decreasing",
            run.failure.is_none() && (last < first || last <= CONVERGED_ERROR),
            format!("first {first:e}, last {last:e}"),
        ),
        _ => VerdictEntry::new("error_decreasing", false, "no estimates produced"),
    });
    if let Some(report) = conditions.as_ref().filter(|r| r.all_pass) {
        let mu = report.derived.mu;
        verdicts.push(match &fit {
            Some(f) => VerdictEntry::new(
                "rate_consistency",
                f.mu_hat >= mu * (1.0 - RATE_TOLERANCE),
                format!("mu_hat = {:e}, mu = {mu:e}", f.mu_hat),
            ),
            None => VerdictEntry::new(
                "rate_consistency",
                errors.last().is_some_and(|e| *e <= CONVERGED_ERROR),
                "too few errors above the floor to fit; judged by final error",
            ),
        });
    }

    Ok(ExperimentResult {
        system: cfg.system.id.clone(),
        observer: cfg.observer.kind,
        seed: cfg.seed,
        window_n: s.window_n,
        d: cfg.observer.d,
        beta: ipg.as_ref().map(|c| c.beta),
        alpha: ipg
            .as_ref()
            .map(|c| (0..c.d).map(|i| c.alpha.step_size(i)).collect())
            .unwrap_or_default(),
        constants: s.constants,
        conditions,
        rho,
        fitted_mu: fit.map(|f| f.mu_hat),
        fit,
        final_error: errors.last().copied(),
        errors,
        final_precond_error,
        diverged: run.failure.is_some(),
        failure,
        verdicts,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub system: String,
    pub observer: ObserverKind,
    pub constants: ConstantsReport,
    /// `ρ` sampled over the region for the configured step sizes.
    pub rho: Option<RhoReport>,
    /// Error after the first instant, from a run over `y_1 … y_N` only.
    pub delta_bar: Option<f64>,
    pub conditions: Option<ConditionReport>,
}

/// Constants and condition report without running the full horizon. `ρ` is
/// sampled over the region; `δ̄` comes from the first instant alone.
pub fn audit(cfg: &ExperimentConfig) -> Result<AuditOutcome> {
    let s = setup(cfg)?;
    let mut outcome = AuditOutcome {
        system: cfg.system.id.clone(),
        observer: cfg.observer.kind,
        constants: s.constants.clone(),
        rho: None,
        delta_bar: None,
        conditions: None,
    };
    if cfg.observer.kind == ObserverKind::Newton {
        return Ok(outcome);
    }
    let config = ipg_config(cfg, &s)?;
    let alphas: Vec<f64> = (0..config.d).map(|i| config.alpha.step_size(i)).collect();
    let rho = sampled_rho(&s.first_window, &s.region, &alphas, config.beta)?;
    let rho = RhoReport {
        rho_n: rho,
        rho,
        contraction_holds: rho < 1.0,
    };
    let (run, _) = run_observer(cfg, &s, &s.truth.outputs[..s.window_n])?;
    let delta_bar = first_instant_delta_bar(&run.trace, s.window_n);
    let k0_error = inverse_at(&s.first_window, &s.truth.states[0])
        .ok()
        .map(|inv| spectral_norm(&(&config.k_init - inv)));
    if let Some(db) = delta_bar {
        let initial_error = (&s.w_init - &s.truth.states[0]).norm();
        let inputs = audit_inputs(cfg, &s.constants, &rho, db, initial_error, k0_error);
        outcome.conditions = Some(check_theorem_conditions(&s.constants, &config, &inputs)?);
    }
    outcome.rho = Some(rho);
    outcome.delta_bar = delta_bar;
    Ok(outcome)
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Writes `trace.csv` and/or `result.json`, `constants.json`,
/// `conditions.json` into `dir`.
pub fn write_artifacts(result: &ExperimentResult, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    if cfg.wants(Format::Csv) {
        write_file(&dir.join("trace.csv"), &result.trace.to_csv())?;
    }
    if cfg.wants(Format::Json) {
        write_file(&dir.join("result.json"), &to_json(result))?;
        write_file(&dir.join("constants.json"), &to_json(&result.constants))?;
        if let Some(c) = &result.conditions {
            write_file(&dir.join("conditions.json"), &to_json(c))?;
        }
    }
    Ok(())
}

pub fn write_audit(outcome: &AuditOutcome, dir: &Path) -> Result<()> {
    write_file(&dir.join("constants.json"), &to_json(&outcome.constants))?;
    if let Some(c) = &outcome.conditions {
        write_file(&dir.join("conditions.json"), &to_json(c))?;
    }
    write_file(&dir.join("audit.json"), &to_json(outcome))
}

/// `k,x1..xn,y1..yp` with `k` counted from 1.
pub fn trajectory_csv(t: &Trajectory) -> String {
    let n = t.states.first().map_or(0, |x| x.len());
    let p = t.outputs.first().map_or(0, |y| y.len());
    let mut out = String::from("k");
    (1..=n).for_each(|j| {
        let _ = write!(out, ",x{j}");
    });
    (1..=p).for_each(|j| {
        let _ = write!(out, ",y{j}");
    });
    out.push('\n');
    for (k, (x, y)) in t.states.iter().zip(&t.outputs).enumerate() {
        let _ = write!(out, "{}", k + 1);
        for v in x.iter().chain(y.iter()) {
            let _ = write!(out, ",{v:e}");
        }
        out.push('\n');
    }
    out
}

pub fn write_trajectory(t: &Trajectory, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    if cfg.wants(Format::Csv) {
        write_file(&dir.join("truth.csv"), &trajectory_csv(t))?;
    }
    if cfg.wants(Format::Json) {
        write_file(&dir.join("truth.json"), &to_json(t))?;
    }
    Ok(())
}

//! Sampled estimates of the Lipschitz and eigenvalue constants the
//! convergence guarantee is stated in, and measurement of the preconditioner
//! contraction factor from a run.
//!
//! Every Lipschitz constant here is a supremum of ratios that were actually
//! evaluated, so it can only under-estimate the true constant over the region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{checked_inverse, contraction_factor, eigen_summary, spectral_norm};
use crate::system::{SystemModel, Trajectory};
use crate::trace::RunTrace;
use crate::window::ObservabilityWindow;
use crate::{Matrix, Vector};

/// Added to `−λ_min` when an eigenvalue shift is required.
pub const BETA_MARGIN: f64 = 0.1;

/// Upper bound on the number of grid points laid over the region.
const GRID_BUDGET: usize = 4096;
const GRID_MAX_PER_AXIS: usize = 65;

/// Axis-aligned box with a sampling budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lower: Vector,
    pub upper: Vector,
    /// Number of uniformly drawn points, on top of a fixed coarse grid.
    pub samples: usize,
    pub seed: u64,
}

impl Region {
    pub fn new(lower: Vector, upper: Vector, samples: usize, seed: u64) -> Result<Self> {
        let r = Region {
            lower,
            upper,
            samples,
            seed,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::dimension("region bounds", self.lower.len(), self.upper.len()));
        }
        if self.lower.is_empty() {
            return Err(Error::Config("region must have at least one dimension".into()));
        }
        if self
            .lower
            .iter()
            .zip(self.upper.iter())
            .any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi))
        {
            return Err(Error::Config("region requires finite bounds with lower <= upper".into()));
        }
        if self.samples < 2 {
            return Err(Error::Config(format!("region needs at least 2 samples, got {}", self.samples)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &Vector) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(j, v)| *v >= self.lower[j] && *v <= self.upper[j])
    }

    fn grid_per_axis(&self) -> usize {
        let n = self.dim() as f64;
        let per_axis = (GRID_BUDGET as f64).powf(1.0 / n).floor() as usize;
        per_axis.clamp(2, GRID_MAX_PER_AXIS)
    }

    /// Grid nodes in row-major order together with each node's multi-index.
    fn grid(&self) -> (Vec<Vector>, usize) {
        let g = self.grid_per_axis();
        let n = self.dim();
        let total = g.pow(n as u32);
        let mut nodes = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut x = Vector::zeros(n);
            for j in (0..n).rev() {
                let idx = rem % g;
                rem /= g;
                let t = idx as f64 / (g - 1) as f64;
                x[j] = self.lower[j] + t * (self.upper[j] - self.lower[j]);
            }
            nodes.push(x);
        }
        (nodes, g)
    }

    /// The first `samples` points of the seeded uniform stream; a larger
    /// budget extends the same stream.
    pub fn random_points(&self) -> Vec<Vector> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.samples)
            .map(|_| {
                Vector::from_iterator(
                    self.dim(),
                    (0..self.dim()).map(|j| {
                        let u: f64 = rng.random();
                        self.lower[j] + u * (self.upper[j] - self.lower[j])
                    }),
                )
            })
            .collect()
    }
}

/// Sampled constants over a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub system: String,
    pub window_n: usize,
    /// Lipschitz constant of the dynamics.
    #[serde(rename = "L")]
    pub lipschitz_dynamics: f64,
    /// Lipschitz constant of the observability map.
    #[serde(rename = "l")]
    pub lipschitz_map: f64,
    /// Lipschitz constant of its Jacobian.
    pub gamma: f64,
    /// Largest real part of an eigenvalue of `H_x` seen.
    #[serde(rename = "Lambda")]
    pub lambda_max: f64,
    /// Smallest real part seen; non-positive values mean the positivity
    /// assumption fails on the region.
    pub lambda_min: f64,
    /// `max ‖H_x(F(x))⁻¹‖`.
    pub eta: f64,
    /// Lipschitz constant of `H_x⁻¹`.
    #[serde(rename = "L2")]
    pub lipschitz_inverse: f64,
    /// `C_k = ‖x_{k+1} − F(x_{k+1})‖` along a reference trajectory, from `C_0`.
    #[serde(rename = "C_seq")]
    pub c_seq: Vec<f64>,
    /// `max(0, −λ_min) + margin` when `λ_min ≤ 0`, else 0.
    pub beta_required: f64,
    pub eigenvalues_positive: bool,
    pub complex_eigenvalues: bool,
    /// Samples where `H_x` (or `H_x ∘ F`) could not be inverted.
    pub singular_samples: usize,
    /// False when singular samples make `eta` and `L2` unreliable.
    pub inverse_constants_reliable: bool,
    pub points_evaluated: usize,
    pub pairs_evaluated: usize,
    pub method: String,
}

struct PointEval {
    x: Vector,
    f: Vector,
    h: Vector,
    jac: Matrix,
    inv: Option<Matrix>,
}

#[derive(Default)]
struct Sup {
    l_dyn: f64,
    l_map: f64,
    gamma: f64,
    l_inv: f64,
    pairs: usize,
}

impl Sup {
    fn pair(&mut self, a: &PointEval, b: &PointEval) {
        let dist = (&a.x - &b.x).norm();
        if dist == 0.0 {
            return;
        }
        self.pairs += 1;
        self.l_dyn = self.l_dyn.max((&a.f - &b.f).norm() / dist);
        self.l_map = self.l_map.max((&a.h - &b.h).norm() / dist);
        self.gamma = self.gamma.max(spectral_norm(&(&a.jac - &b.jac)) / dist);
        if let (Some(ia), Some(ib)) = (&a.inv, &b.inv) {
            self.l_inv = self.l_inv.max(spectral_norm(&(ia - ib)) / dist);
        }
    }
}

/// Input used to evaluate `F` while sampling: the window's oldest input, or
/// the zero input when the window has none.
fn sampling_input(window: &ObservabilityWindow) -> Vector {
    window
        .inputs()
        .first()
        .cloned()
        .unwrap_or_else(|| Vector::zeros(window.system().input_dim()))
}

/// Estimates `L`, `l`, `γ`, `Λ`, `λ_min`, `η` and `L₂` over `region` by
/// evaluating all pairs of random samples, all axis-neighbour pairs of a
/// coarse grid, and Jacobian norms at every evaluated point.
pub fn estimate_constants(window: &ObservabilityWindow, region: &Region) -> Result<ConstantsReport> {
    region.validate()?;
    let system = window.system();
    if region.dim() != system.state_dim() {
        return Err(Error::dimension("region dimension", system.state_dim(), region.dim()));
    }
    let u = sampling_input(window);

    let mut singular = 0usize;
    let mut lambda_max = f64::NEG_INFINITY;
    let mut lambda_min = f64::INFINITY;
    let mut complex = false;
    let mut eta = 0.0_f64;
    let mut jac_norm_dyn = 0.0_f64;
    let mut jac_norm_map = 0.0_f64;

    let mut evaluate = |x: Vector| -> Result<PointEval> {
        let f = system.step(&x, &u)?;
        let h = window.evaluate(&x)?;
        let jac = window.jacobian(&x)?;
        let dyn_jac = system.dynamics_jacobian(&x, &u)?;
        if f.iter().chain(h.iter()).chain(jac.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("model at sample {:?}", x.as_slice())));
        }
        jac_norm_dyn = jac_norm_dyn.max(spectral_norm(&dyn_jac));
        jac_norm_map = jac_norm_map.max(spectral_norm(&jac));
        let eig = eigen_summary(&jac);
        lambda_max = lambda_max.max(eig.max_real);
        lambda_min = lambda_min.min(eig.min_real);
        complex |= eig.has_complex;
        let inv = checked_inverse(&jac).ok();
        if inv.is_none() {
            singular += 1;
        }
        match checked_inverse(&window.jacobian(&f)?) {
            Ok(inv_f) => eta = eta.max(spectral_norm(&inv_f)),
            Err(_) => singular += 1,
        }
        Ok(PointEval { x, f, h, jac, inv })
    };

    let (grid_points, g) = region.grid();
    let grid: Vec<PointEval> = grid_points.into_iter().map(&mut evaluate).collect::<Result<_>>()?;
    let random: Vec<PointEval> = region.random_points().into_iter().map(&mut evaluate).collect::<Result<_>>()?;

    let mut sup = Sup::default();
    let n = region.dim();
    for (flat, node) in grid.iter().enumerate() {
        let mut stride = 1;
        for _axis in (0..n).rev() {
            let idx = (flat / stride) % g;
            if idx + 1 < g {
                sup.pair(node, &grid[flat + stride]);
            }
            stride *= g;
        }
    }
    for a in 0..random.len() {
        for b in (a + 1)..random.len() {
            sup.pair(&random[a], &random[b]);
        }
    }

    let eigenvalues_positive = lambda_min > 0.0;
    Ok(ConstantsReport {
        system: system.name().to_string(),
        window_n: window.window_n(),
        lipschitz_dynamics: sup.l_dyn.max(jac_norm_dyn),
        lipschitz_map: sup.l_map.max(jac_norm_map),
        gamma: sup.gamma,
        lambda_max,
        lambda_min,
        eta,
        lipschitz_inverse: sup.l_inv,
        c_seq: Vec::new(),
        beta_required: if eigenvalues_positive { 0.0 } else { -lambda_min + BETA_MARGIN },
        eigenvalues_positive,
        complex_eigenvalues: complex,
        singular_samples: singular,
        inverse_constants_reliable: singular == 0,
        points_evaluated: grid.len() + random.len(),
        pairs_evaluated: sup.pairs,
        method: "sampled lower bounds".to_string(),
    })
}

/// `C_k = ‖x_{k+1} − F(x_{k+1}, u_{k+1})‖` for every consecutive pair of a
/// reference trajectory, i.e. the distance between consecutive true states.
pub fn step_mismatch_sequence(system: &SystemModel, reference: &Trajectory) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(reference.states.len().saturating_sub(1));
    for (j, x) in reference.states.iter().enumerate().take(reference.states.len().saturating_sub(1)) {
        let u = reference.inputs.get(j).cloned().unwrap_or_else(|| system.empty_input());
        out.push((x - system.step(x, &u)?).norm());
    }
    Ok(out)
}

/// Contraction factors measured over a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoReport {
    /// `max_i ‖I − α⁽ⁱ⁾·H_x(w_N⁽ⁱ⁾)‖` over the first instant.
    #[serde(rename = "rho_N")]
    pub rho_n: f64,
    /// Maximum over every recorded `(k, i)`.
    pub rho: f64,
    /// `ρ < 1`.
    pub contraction_holds: bool,
}

/// Measures `ρ_N` and `ρ` from `(k, α, H_x(w))` triples, using
/// `‖I − α·(H_x + β·I)‖₂`.
pub fn measure_rho_from<'a, I>(records: I, beta: f64) -> Result<RhoReport>
where
    I: IntoIterator<Item = (usize, f64, &'a Matrix)>,
{
    let factors: Vec<(usize, f64)> = records
        .into_iter()
        .map(|(k, alpha, jac)| (k, contraction_factor(alpha, jac, beta)))
        .collect();
    reduce_rho(&factors)
}

/// Measures `ρ_N` and `ρ` from the contraction factors recorded in an IPG trace.
pub fn measure_rho(trace: &RunTrace) -> Result<RhoReport> {
    let factors: Vec<(usize, f64)> = trace
        .iterations
        .iter()
        .filter_map(|r| r.contraction.map(|c| (r.k, c)))
        .collect();
    reduce_rho(&factors)
}

fn reduce_rho(factors: &[(usize, f64)]) -> Result<RhoReport> {
    let first_k = factors
        .iter()
        .map(|(k, _)| *k)
        .min()
        .ok_or_else(|| Error::Precondition("trace holds no contraction data".into()))?;
    let rho_n = factors.iter().filter(|(k, _)| *k == first_k).map(|(_, c)| *c).fold(0.0, f64::max);
    let rho = factors.iter().map(|(_, c)| *c).fold(0.0, f64::max);
    Ok(RhoReport {
        rho_n,
        rho,
        contraction_holds: rho < 1.0,
    })
}

/// `max ‖I − α·(H_x(x) + β·I)‖` over region samples and the given step
/// sizes, an a-priori stand-in for `ρ` before any run.
pub fn sampled_rho(window: &ObservabilityWindow, region: &Region, alphas: &[f64], beta: f64) -> Result<f64> {
    region.validate()?;
    let (grid, _) = region.grid();
    let mut rho = 0.0_f64;
    for x in grid.into_iter().chain(region.random_points()) {
        let jac = window.jacobian(&x)?;
        for &alpha in alphas {
            rho = rho.max(contraction_factor(alpha, &jac, beta));
        }
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn halving_window() -> ObservabilityWindow {
        let sys = SystemModel::new("halving", 1, 0, 1, |x, _| x * 0.5, |x| x.clone())
            .unwrap()
            .with_dynamics_jacobian(|_, _| Matrix::from_element(1, 1, 0.5))
            .with_output_jacobian(|_| Matrix::from_element(1, 1, 1.0));
        ObservabilityWindow::new(sys, 1, &[]).unwrap()
    }

    fn interval(lo: f64, hi: f64, samples: usize) -> Region {
        Region::new(Vector::from_element(1, lo), Vector::from_element(1, hi), samples, 11).unwrap()
    }

    #[test]
    fn scalar_linear_constants_are_exact() {
        let c = estimate_constants(&halving_window(), &interval(-1.0, 1.0, 50)).unwrap();
        assert_relative_eq!(c.lipschitz_dynamics, 0.5, epsilon = 1e-12);
        assert_relative_eq!(c.lipschitz_map, 1.0, epsilon = 1e-12);
        assert_eq!(c.gamma, 0.0);
        assert_eq!(c.lambda_max, 1.0);
        assert_eq!(c.lambda_min, 1.0);
        assert_eq!(c.eta, 1.0);
        assert_eq!(c.lipschitz_inverse, 0.0);
        assert!(c.eigenvalues_positive);
        assert_eq!(c.beta_required, 0.0);
        assert_eq!(c.method, "sampled lower bounds");
    }

    #[test]
    fn planar_constants() {
        let sys = SystemModel::new(
            "swap_scale",
            2,
            0,
            1,
            |x, _| Vector::from_vec(vec![x[1], 0.9 * x[0]]),
            |x| Vector::from_element(1, x[0]),
        )
        .unwrap()
        .with_dynamics_jacobian(|_, _| Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.9, 0.0]))
        .with_output_jacobian(|_| Matrix::from_row_slice(1, 2, &[1.0, 0.0]));
        let win = ObservabilityWindow::new(sys, 2, &[]).unwrap();
        let region = Region::new(Vector::from_element(2, -1.0), Vector::from_element(2, 1.0), 40, 3).unwrap();
        let c = estimate_constants(&win, &region).unwrap();
        // largest singular value of [[0, 1], [0.9, 0]], computed independently
        let independent = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.9, 0.0]).svd(false, false).singular_values.max();
        assert_relative_eq!(independent, 1.0, epsilon = 1e-14);
        assert_relative_eq!(c.lipschitz_dynamics, independent, epsilon = 1e-12);
        assert_eq!(c.lambda_max, 1.0);
        assert_eq!(c.lambda_min, 1.0);
        assert_eq!(c.gamma, 0.0);
    }

    #[test]
    fn cubic_output_constants() {
        let sys = SystemModel::new("cube", 1, 0, 1, |x, _| x.clone(), |x| x.map(|v| v * v * v))
            .unwrap()
            .with_dynamics_jacobian(|_, _| Matrix::from_element(1, 1, 1.0))
            .with_output_jacobian(|x| Matrix::from_element(1, 1, 3.0 * x[0] * x[0]));
        let win = ObservabilityWindow::new(sys, 1, &[]).unwrap();
        let c = estimate_constants(&win, &interval(1.0, 2.0, 200)).unwrap();
        // dense grid of 3x² and 6x over [1, 2]
        let grid: Vec<f64> = (0..=10_000).map(|j| 1.0 + j as f64 / 10_000.0).collect();
        let lam_max = grid.iter().map(|x| 3.0 * x * x).fold(f64::MIN, f64::max);
        let lam_min = grid.iter().map(|x| 3.0 * x * x).fold(f64::MAX, f64::min);
        let gamma = grid.iter().map(|x| 6.0 * x).fold(f64::MIN, f64::max);
        assert_relative_eq!(c.lambda_max, lam_max, epsilon = 1e-12);
        assert_relative_eq!(c.lambda_min, lam_min, epsilon = 1e-12);
        assert!(c.gamma <= gamma + 1e-9);
        assert!(c.gamma > 0.99 * gamma, "gamma {}", c.gamma);
    }

    #[test]
    fn negative_eigenvalue_requires_shift() {
        let sys = SystemModel::new("flip", 1, 0, 1, |x, _| x * 0.5, |x| x * -0.5)
            .unwrap()
            .with_dynamics_jacobian(|_, _| Matrix::from_element(1, 1, 0.5))
            .with_output_jacobian(|_| Matrix::from_element(1, 1, -0.5));
        let win = ObservabilityWindow::new(sys, 1, &[]).unwrap();
        let c = estimate_constants(&win, &interval(-1.0, 1.0, 10)).unwrap();
        assert!(!c.eigenvalues_positive);
        assert_relative_eq!(c.beta_required, 0.5 + BETA_MARGIN, epsilon = 1e-15);
    }

    #[test]
    fn singular_samples_are_flagged() {
        let sys = SystemModel::new("sq", 1, 0, 1, |x, _| x.clone(), |x| x.map(|v| v * v))
            .unwrap()
            .with_dynamics_jacobian(|_, _| Matrix::from_element(1, 1, 1.0))
            .with_output_jacobian(|x| Matrix::from_element(1, 1, 2.0 * x[0]));
        let win = ObservabilityWindow::new(sys, 1, &[]).unwrap();
        // the grid on [-1, 1] with an odd node count contains 0
        let c = estimate_constants(&win, &interval(-1.0, 1.0, 5)).unwrap();
        assert!(c.singular_samples > 0);
        assert!(!c.inverse_constants_reliable);
    }

    #[test]
    fn region_validation() {
        assert!(Region::new(Vector::from_element(1, 1.0), Vector::from_element(1, 0.0), 5, 0).is_err());
        assert!(Region::new(Vector::from_element(1, 0.0), Vector::from_element(1, 1.0), 1, 0).is_err());
        assert!(Region::new(Vector::from_element(1, 0.0), Vector::from_element(2, 1.0), 5, 0).is_err());
    }

    #[test]
    fn rho_examples() {
        let one = Matrix::from_element(1, 1, 1.0);
        let r = measure_rho_from([(1, 0.5, &one), (2, 0.5, &one)], 0.0).unwrap();
        assert_eq!((r.rho_n, r.rho), (0.5, 0.5));
        assert!(r.contraction_holds);

        let lam = Matrix::from_element(1, 1, 4.0);
        let r = measure_rho_from([(1, 0.25, &lam)], 0.0).unwrap();
        assert_eq!(r.rho, 0.0);

        let diag = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 2.0]));
        let r = measure_rho_from([(3, 0.4, &diag)], 0.0).unwrap();
        // max{|1 − 0.4|, |1 − 0.8|}
        assert_relative_eq!(r.rho, 0.6_f64.max(0.2), epsilon = 1e-15);
    }

    #[test]
    fn rho_of_empty_trace_is_precondition_error() {
        assert!(matches!(measure_rho(&RunTrace::new()), Err(Error::Precondition(_))));
    }

    #[test]
    fn step_mismatch_on_fixed_point_is_zero() {
        let win = halving_window();
        let traj = crate::system::simulate(win.system(), &Vector::from_element(1, 0.0), &[], 5).unwrap();
        assert!(step_mismatch_sequence(win.system(), &traj).unwrap().iter().all(|c| *c == 0.0));
        let traj = crate::system::simulate(win.system(), &Vector::from_element(1, 4.0), &[], 2).unwrap();
        assert_eq!(step_mismatch_sequence(win.system(), &traj).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn constants_json_uses_symbol_names() {
        let c = estimate_constants(&halving_window(), &interval(-1.0, 1.0, 5)).unwrap();
        let json = serde_json::to_value(&c).unwrap();
        for key in ["L", "l", "gamma", "Lambda", "lambda_min", "eta", "L2", "C_seq"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
    }
}

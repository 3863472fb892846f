//! Built-in benchmark systems, all autonomous with analytic Jacobians.
//!
//! | id | n | p | N | positive `H_x` eigenvalues |
//! |----|---|---|---|----------------------------|
//! | `scalar_linear` | 1 | 1 | 1 | yes |
//! | `planar_linear` | 2 | 1 | 2 | yes |
//! | `planar_mild_nonlinear` | 2 | 1 | 2 | yes |
//! | `cubic_output` | 1 | 1 | 1 | yes |
//! | `indefinite_jacobian` | 2 | 2 | 1 | no, one eigenvalue is −0.5 |

use std::collections::BTreeMap;

use ipg_core::{Matrix, SystemModel, Vector};

use crate::error::{HarnessError, Result};

pub const BUILTIN_IDS: [&str; 5] = [
    "scalar_linear",
    "planar_linear",
    "planar_mild_nonlinear",
    "cubic_output",
    "indefinite_jacobian",
];

/// Built-ins whose observability Jacobian has positive real eigenvalues everywhere.
pub const POSITIVE_EIGENVALUE_IDS: [&str; 4] = ["scalar_linear", "planar_linear", "planar_mild_nonlinear", "cubic_output"];

pub type Params = BTreeMap<String, f64>;

struct ParamReader<'a> {
    id: &'a str,
    params: &'a Params,
    allowed: &'static [&'static str],
}

impl ParamReader<'_> {
    fn check(&self) -> Result<()> {
        if let Some(unknown) = self.params.keys().find(|k| !self.allowed.contains(&k.as_str())) {
            return Err(HarnessError::Config(format!(
                "system {} has no parameter '{unknown}' (accepted: {})",
                self.id,
                if self.allowed.is_empty() { "none".to_string() } else { self.allowed.join(", ") }
            )));
        }
        if let Some((k, v)) = self.params.iter().find(|(_, v)| !v.is_finite()) {
            return Err(HarnessError::Config(format!("parameter {k} of {} must be finite, got {v}", self.id)));
        }
        Ok(())
    }

    fn get(&self, name: &str, default: f64) -> f64 {
        self.params.get(name).copied().unwrap_or(default)
    }
}

fn scalar(v: f64) -> Matrix {
    Matrix::from_element(1, 1, v)
}

/// Looks up a built-in by id. Unknown ids and unknown parameter names are
/// configuration errors.
pub fn builtin_system(id: &str, params: &Params) -> Result<SystemModel> {
    let reader = |allowed: &'static [&'static str]| ParamReader { id, params, allowed };
    let system = match id {
        // F(x) = a·x, h(x) = x
        "scalar_linear" => {
            let r = reader(&["a"]);
            r.check()?;
            let a = r.get("a", 0.5);
            SystemModel::new(id, 1, 0, 1, move |x, _| x * a, |x| x.clone())?
                .with_dynamics_jacobian(move |_, _| scalar(a))
                .with_output_jacobian(|_| scalar(1.0))
        }
        // F(x) = (x₂, a·x₁ + ε·sin x₁), h(x) = x₁
        "planar_linear" | "planar_mild_nonlinear" => {
            let allowed: &'static [&'static str] = if id == "planar_linear" { &["a"] } else { &["a", "epsilon"] };
            let r = reader(allowed);
            r.check()?;
            let a = r.get("a", 0.9);
            let eps = if id == "planar_linear" { 0.0 } else { r.get("epsilon", 0.05) };
            SystemModel::new(
                id,
                2,
                0,
                1,
                move |x, _| Vector::from_vec(vec![x[1], a * x[0] + eps * x[0].sin()]),
                |x| Vector::from_element(1, x[0]),
            )?
            .with_dynamics_jacobian(move |x, _| Matrix::from_row_slice(2, 2, &[0.0, 1.0, a + eps * x[0].cos(), 0.0]))
            .with_output_jacobian(|_| Matrix::from_row_slice(1, 2, &[1.0, 0.0]))
        }
        // F(x) = a·x, h(x) = x + x³
        "cubic_output" => {
            let r = reader(&["a"]);
            r.check()?;
            let a = r.get("a", 0.8);
            SystemModel::new(id, 1, 0, 1, move |x, _| x * a, |x| x.map(|v| v + v * v * v))?
                .with_dynamics_jacobian(move |_, _| scalar(a))
                .with_output_jacobian(|x| scalar(1.0 + 3.0 * x[0] * x[0]))
        }
        // F(x) = (0.5·x₁, 0.1·x₂ + 0.05·sin x₁), h(x) = (x₁ + 0.1·x₂², −0.5·x₂).
        // H_x is upper triangular with eigenvalues 1 and −0.5 everywhere.
        "indefinite_jacobian" => {
            reader(&[]).check()?;
            SystemModel::new(
                id,
                2,
                0,
                2,
                |x, _| Vector::from_vec(vec![0.5 * x[0], 0.1 * x[1] + 0.05 * x[0].sin()]),
                |x| Vector::from_vec(vec![x[0] + 0.1 * x[1] * x[1], -0.5 * x[1]]),
            )?
            .with_dynamics_jacobian(|x, _| Matrix::from_row_slice(2, 2, &[0.5, 0.0, 0.05 * x[0].cos(), 0.1]))
            .with_output_jacobian(|x| Matrix::from_row_slice(2, 2, &[1.0, 0.2 * x[1], 0.0, -0.5]))
        }
        other => {
            return Err(HarnessError::Config(format!(
                "unknown system '{other}'; valid ids: {}",
                BUILTIN_IDS.join(", ")
            )))
        }
    };
    Ok(system)
}

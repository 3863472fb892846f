//! Experiment configuration, read from TOML. Unknown keys are rejected at
//! every level.
//!
//! ```toml
//! seed = 7
//! horizon = 40
//! truth_x0 = [0.5, -0.3]
//! formats = ["csv", "json"]
//!
//! [system]
//! id = "planar_mild_nonlinear"
//! params = { epsilon = 0.05 }
//!
//! [region]
//! lower = [-1.0, -1.0]
//! upper = [1.0, 1.0]
//! samples = 200
//!
//! [observer]
//! kind = "ipg"
//! d = 10
//! w_offset = [0.1, 0.1]
//! alpha = { kind = "constant", value = 0.5 }
//! k_init = { kind = "scaled_identity", scale = 0.5 }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ipg_core::{Matrix, Vector};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::systems::{builtin_system, Params};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Number of sampling instants, i.e. measurements `y_1 … y_T`.
    pub horizon: usize,
    pub truth_x0: Vec<f64>,
    pub system: SystemSpec,
    pub region: RegionSpec,
    pub observer: ObserverSpec,
    #[serde(default)]
    pub audit: AuditSpec,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    /// Dotted config paths mapped to the values to sweep over.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sweep: BTreeMap<String, Vec<toml::Value>>,
}

fn default_outputs() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub id: String,
    #[serde(default)]
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Defaults to the experiment seed.
    pub seed: Option<u64>,
}

fn default_samples() -> usize {
    256
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObserverKind {
    Ipg,
    IpgBeta,
    Newton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverSpec {
    pub kind: ObserverKind,
    /// Inner iterations per instant.
    pub d: usize,
    /// IPG step-size policy; defaults to `0.99 / (Λ + β)`.
    pub alpha: Option<AlphaSpec>,
    /// Eigenvalue shift for `ipg_beta`; defaults to the constants report's
    /// `beta_required`.
    pub beta: Option<f64>,
    #[serde(default = "default_delta_step")]
    pub delta_step: f64,
    /// Newton step multiplier.
    pub damping: Option<f64>,
    /// Absolute initial estimate of `x_1`.
    pub w_init: Option<Vec<f64>>,
    /// Initial estimate as an offset from `truth_x0`.
    pub w_offset: Option<Vec<f64>>,
    #[serde(default)]
    pub k_init: KInitSpec,
}

fn default_delta_step() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlphaSpec {
    Constant {
        value: f64,
    },
    Custom {
        values: Vec<f64>,
    },
    /// `fraction / (Λ + β)` with `Λ` from the constants report.
    LambdaFraction {
        #[serde(default = "default_fraction")]
        fraction: f64,
    },
    /// The theorem schedule; `Λ` and `l` default to the constants report.
    Theorem {
        rho: f64,
        mu: f64,
        varrho: f64,
        #[serde(rename = "D2")]
        d2: f64,
        #[serde(rename = "Lambda")]
        lambda_max: Option<f64>,
        l: Option<f64>,
    },
}

fn default_fraction() -> f64 {
    ipg_core::ipg::SAFETY_FACTOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KInitSpec {
    ScaledIdentity {
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// `H_x(x_1)⁻¹` from the true initial state.
    InverseAtTruth,
    Matrix {
        rows: Vec<Vec<f64>>,
    },
}

fn default_scale() -> f64 {
    1.0
}

impl Default for KInitSpec {
    fn default() -> Self {
        KInitSpec::ScaledIdentity { scale: 1.0 }
    }
}

impl KInitSpec {
    pub(crate) fn explicit(&self, n: usize) -> Result<Option<Matrix>> {
        match self {
            KInitSpec::ScaledIdentity { scale } => Ok(Some(Matrix::identity(n, n) * *scale)),
            KInitSpec::InverseAtTruth => Ok(None),
            KInitSpec::Matrix { rows } => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(HarnessError::Config(format!("k_init matrix must be {n}x{n}")));
                }
                Ok(Some(Matrix::from_fn(n, n, |r, c| rows[r][c])))
            }
        }
    }
}

/// Theorem parameters chosen by the user. Unset values get documented
/// defaults in the experiment runner.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSpec {
    pub mu: Option<f64>,
    pub varrho: Option<f64>,
    #[serde(rename = "D2")]
    pub d2: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(HarnessError::Config(format!("unknown format '{other}', expected csv or json"))),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks everything that can be checked without running: known system,
    /// dimensions, `horizon ≥ N`, and observer options matching its kind.
    pub fn validate(&self) -> Result<()> {
        let system = builtin_system(&self.system.id, &self.system.params)?;
        let n = system.state_dim();
        let window_n = n / system.output_dim();
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.horizon < window_n {
            return bad(format!("horizon {} is shorter than the window length N = {window_n}", self.horizon));
        }
        if self.truth_x0.len() != n {
            return bad(format!("truth_x0 has {} entries, system state has {n}", self.truth_x0.len()));
        }
        if self.region.lower.len() != n || self.region.upper.len() != n {
            return bad(format!("region bounds must have {n} entries"));
        }
        let obs = &self.observer;
        if obs.d == 0 {
            return bad("observer.d must be at least 1".into());
        }
        if obs.w_init.is_some() && obs.w_offset.is_some() {
            return bad("set at most one of observer.w_init and observer.w_offset".into());
        }
        for (name, v) in [("w_init", &obs.w_init), ("w_offset", &obs.w_offset)] {
            if v.as_ref().is_some_and(|v| v.len() != n) {
                return bad(format!("observer.{name} must have {n} entries"));
            }
        }
        if !(obs.delta_step.is_finite() && obs.delta_step > 0.0) {
            return bad(format!("observer.delta_step must be positive, got {}", obs.delta_step));
        }
        match obs.kind {
            ObserverKind::Ipg if obs.beta.is_some() => return bad("observer.beta requires kind = \"ipg_beta\"".into()),
            ObserverKind::Ipg | ObserverKind::IpgBeta if obs.damping.is_some() => {
                return bad("observer.damping requires kind = \"newton\"".into())
            }
            ObserverKind::Newton if obs.alpha.is_some() || obs.beta.is_some() => {
                return bad("observer.alpha and observer.beta do not apply to kind = \"newton\"".into())
            }
            _ => {}
        }
        if obs.beta.is_some_and(|b| !(b.is_finite() && b >= 0.0)) {
            return bad("observer.beta must be finite and non-negative".into());
        }
        obs.k_init.explicit(n)?;
        if self.formats.is_empty() {
            return bad("formats must list at least one of csv, json".into());
        }
        Ok(())
    }

    pub fn truth_x0(&self) -> Vector {
        Vector::from_row_slice(&self.truth_x0)
    }

    pub fn wants(&self, format: Format) -> bool {
        self.formats.contains(&format)
    }
}

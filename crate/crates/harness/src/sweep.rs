//! Expansion of a `[sweep]` table into one config per grid point.
//!
//! ```toml
//! [sweep]
//! "observer.d" = [1, 5, 10]
//! "system.params.epsilon" = [0.0, 0.05]
//! ```
//!
//! Keys are dotted paths into the config; the grid is the Cartesian product
//! in key order, and each point writes into `<outputs>/run_<index>`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub label: String,
    /// `(path, value)` pairs applied to the base config, as TOML text.
    pub overrides: Vec<(String, String)>,
    #[serde(skip)]
    pub config: Option<ExperimentConfig>,
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts = path.split('.').peekable();
    let mut current = table;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(HarnessError::Config(format!("empty segment in sweep path '{path}'")));
        }
        if parts.peek().is_none() {
            current.insert(part.to_string(), value);
            return Ok(());
        }
        let entry = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("sweep path '{path}' runs through non-table '{part}'")))?;
    }
    Err(HarnessError::Config("empty sweep path".into()))
}

/// Parses `text` and expands its `[sweep]` table. Without a sweep table the
/// result is the single base config.
pub fn expand_sweep(text: &str) -> Result<Vec<SweepPoint>> {
    let mut base: toml::Table = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
    let sweep = match base.remove("sweep") {
        None => toml::Table::new(),
        Some(toml::Value::Table(t)) => t,
        Some(_) => return Err(HarnessError::Config("sweep must be a table".into())),
    };
    let mut axes: Vec<(String, Vec<toml::Value>)> = Vec::with_capacity(sweep.len());
    for (key, values) in sweep {
        match values {
            toml::Value::Array(vs) if !vs.is_empty() => axes.push((key, vs)),
            _ => return Err(HarnessError::Config(format!("sweep.\"{key}\" must be a non-empty array"))),
        }
    }
    axes.sort_by(|a, b| a.0.cmp(&b.0));
    let outputs = base
        .get("outputs")
        .and_then(|v| v.as_str())
        .unwrap_or("out")
        .to_string();

    let total: usize = axes.iter().map(|(_, v)| v.len()).product();
    let mut points = Vec::with_capacity(total);
    for index in 0..total {
        let mut table = base.clone();
        let mut overrides = Vec::with_capacity(axes.len());
        let mut rem = index;
        for (key, values) in axes.iter().rev() {
            let value = values[rem % values.len()].clone();
            rem /= values.len();
            overrides.push((key.clone(), value.to_string()));
            set_path(&mut table, key, value)?;
        }
        overrides.reverse();
        let label = if axes.is_empty() {
            String::from("run")
        } else {
            format!("run_{index:03}")
        };
        if !axes.is_empty() {
            let dir = Path::new(&outputs).join(&label);
            table.insert("outputs".into(), toml::Value::String(dir.to_string_lossy().into_owned()));
        }
        let config = ExperimentConfig::from_table(table).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{label}: {msg}")),
            other => other,
        })?;
        points.push(SweepPoint {
            label,
            overrides,
            config: Some(config),
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        horizon = 10
        truth_x0 = [0.3]
        outputs = "sweep_out"
        [system]
        id = "scalar_linear"
        [region]
        lower = [-1.0]
        upper = [1.0]
        samples = 8
        [observer]
        kind = "ipg"
        d = 2
    "#;

    #[test]
    fn cartesian_product_in_key_order() {
        let text = format!("{BASE}\n[sweep]\n\"observer.d\" = [1, 3]\n\"system.params.a\" = [0.2, 0.4, 0.6]\n");
        let pts = expand_sweep(&text).unwrap();
        assert_eq!(pts.len(), 6);
        let c = pts[4].config.as_ref().unwrap();
        assert_eq!(c.observer.d, 3);
        assert_eq!(c.system.params["a"], 0.4);
        assert_eq!(c.outputs, Path::new("sweep_out").join("run_004"));
        assert_eq!(pts[4].overrides[0], ("observer.d".to_string(), "3".to_string()));
    }

    #[test]
    fn no_sweep_is_single_run() {
        let pts = expand_sweep(BASE).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].config.as_ref().unwrap().outputs, Path::new("sweep_out"));
    }

    #[test]
    fn bad_override_is_config_error() {
        let text = format!("{BASE}\n[sweep]\n\"observer.bogus\" = [1]\n");
        assert!(matches!(expand_sweep(&text), Err(HarnessError::Config(_))));
        let text = format!("{BASE}\n[sweep]\n\"observer.d\" = []\n");
        assert!(expand_sweep(&text).is_err());
    }
}

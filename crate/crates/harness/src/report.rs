//! Aggregation of `result.json` files under a directory tree.

use std::path::Path;

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{HarnessError, Result};
use crate::experiment::ExperimentResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Directory of the run relative to the report root, `/`-separated.
    pub run: String,
    pub system: String,
    pub observer: String,
    pub d: usize,
    pub fitted_mu: Option<f64>,
    pub final_error: Option<f64>,
    pub conditions_pass: Option<bool>,
    pub diverged: bool,
    pub all_pass: bool,
    pub failed_verdicts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub runs: usize,
    pub passed: usize,
    pub failed: usize,
    pub diverged: usize,
    pub rows: Vec<ReportRow>,
}

/// Collects every `result.json` below `root`, sorted by run path.
pub fn collect_report(root: &Path) -> Result<Report> {
    if !root.is_dir() {
        return Err(HarnessError::Config(format!("{} is not a directory", root.display())));
    }
    let mut rows = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            HarnessError::io(path, e.into())
        })?;
        if entry.file_name() != "result.json" || !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let result: ExperimentResult = serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let dir = path.parent().unwrap_or(root);
        let rel = dir.strip_prefix(root).unwrap_or(dir);
        let run = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        rows.push(ReportRow {
            run: if run.is_empty() { ".".into() } else { run },
            system: result.system.clone(),
            observer: serde_json::to_value(result.observer)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            d: result.d,
            fitted_mu: result.fitted_mu,
            final_error: result.final_error,
            conditions_pass: result.conditions.as_ref().map(|c| c.all_pass),
            diverged: result.diverged,
            all_pass: result.all_pass(),
            failed_verdicts: result.verdicts.iter().filter(|v| !v.passed).map(|v| v.name.clone()).collect(),
        });
    }
    let passed = rows.iter().filter(|r| r.all_pass).count();
    Ok(Report {
        runs: rows.len(),
        passed,
        failed: rows.len() - passed,
        diverged: rows.iter().filter(|r| r.diverged).count(),
        rows,
    })
}

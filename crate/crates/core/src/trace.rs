//! Per-iteration and per-instant records of an observer run.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Header of the trace CSV. One row per inner iteration plus a summary row
/// per instant with `i = -1`.
pub const CSV_HEADER: &str = "k,i,alpha,err_w,err_xhat,precond_residual,err_K";

/// One inner iteration at instant `k`. Row `i` describes step `i`: the step
/// size it used and the iterate `(w^(i+1), K^(i+1))` it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub i: usize,
    pub alpha: Option<f64>,
    /// `‖w^(i+1) − x_{k−N+1}‖` when truth is known.
    pub err_w: Option<f64>,
    /// `‖H_x(w^(i+1))·K^(i+1) − I‖₂`.
    pub precond_residual: Option<f64>,
    /// `‖K^(i+1) − H_x(x_{k−N+1})⁻¹‖₂` when truth is known.
    pub err_k: Option<f64>,
    /// `‖I − α·(H_x(w^(i)) + β·I)‖₂`, evaluated at the pre-update iterate.
    pub contraction: Option<f64>,
}

/// Per-instant summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstantRecord {
    pub k: usize,
    /// `‖x̂_k − x_k‖` when truth is known.
    pub err_xhat: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub iterations: Vec<IterationRecord>,
    pub instants: Vec<InstantRecord>,
}

fn field(out: &mut String, value: Option<f64>) {
    out.push(',');
    if let Some(v) = value {
        let _ = write!(out, "{v:e}");
    }
}

impl RunTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty() && self.instants.is_empty()
    }

    pub fn push_iteration(&mut self, record: IterationRecord) {
        self.iterations.push(record);
    }

    pub fn push_instant(&mut self, record: InstantRecord) {
        self.instants.push(record);
    }

    /// Iteration rows belonging to instant `k`.
    pub fn iterations_at(&self, k: usize) -> impl Iterator<Item = &IterationRecord> {
        self.iterations.iter().filter(move |r| r.k == k)
    }

    /// `‖x̂_k − x_k‖` in instant order; `None` where truth was unavailable.
    pub fn estimate_errors(&self) -> Vec<Option<f64>> {
        self.instants.iter().map(|r| r.err_xhat).collect()
    }

    /// Last recorded iteration of instant `k`.
    pub fn last_iteration_at(&self, k: usize) -> Option<&IterationRecord> {
        self.iterations_at(k).last()
    }

    /// Monotone `(k, i)` ordering and finiteness of every stored norm.
    pub fn is_well_formed(&self) -> bool {
        let ordered = self
            .iterations
            .windows(2)
            .all(|w| (w[0].k, w[0].i) < (w[1].k, w[1].i));
        let instants_ordered = self.instants.windows(2).all(|w| w[0].k < w[1].k);
        let finite = |v: &Option<f64>| v.is_none_or(|x| x.is_finite());
        let rows_finite = self.iterations.iter().all(|r| {
            finite(&r.alpha) && finite(&r.err_w) && finite(&r.precond_residual) && finite(&r.err_k) && finite(&r.contraction)
        });
        ordered && instants_ordered && rows_finite && self.instants.iter().all(|r| finite(&r.err_xhat))
    }

    /// Renders the trace with [`CSV_HEADER`]. Instants appear in order, each
    /// as its iteration rows followed by the `i = -1` summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.iterations.len() + self.instants.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        let mut rows = self.iterations.iter().peekable();
        for instant in &self.instants {
            while let Some(r) = rows.next_if(|r| r.k <= instant.k) {
                let _ = write!(out, "{},{}", r.k, r.i);
                field(&mut out, r.alpha);
                field(&mut out, r.err_w);
                field(&mut out, None);
                field(&mut out, r.precond_residual);
                field(&mut out, r.err_k);
                out.push('\n');
            }
            let _ = write!(out, "{},-1,,", instant.k);
            field(&mut out, instant.err_xhat);
            out.push_str(",,\n");
        }
        // iterations of an instant that aborted before its summary
        for r in rows {
            let _ = write!(out, "{},{}", r.k, r.i);
            field(&mut out, r.alpha);
            field(&mut out, r.err_w);
            field(&mut out, None);
            field(&mut out, r.precond_residual);
            field(&mut out, r.err_k);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize, i: usize) -> IterationRecord {
        IterationRecord {
            k,
            i,
            alpha: Some(0.5),
            err_w: None,
            precond_residual: Some(0.25),
            err_k: None,
            contraction: Some(0.5),
        }
    }

    #[test]
    fn csv_layout() {
        let mut t = RunTrace::new();
        t.push_iteration(row(2, 0));
        t.push_iteration(row(2, 1));
        t.push_instant(InstantRecord { k: 2, err_xhat: Some(0.125) });
        t.push_iteration(row(3, 0));
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "2,0,5e-1,,,2.5e-1,");
        assert_eq!(lines[2], "2,1,5e-1,,,2.5e-1,");
        assert_eq!(lines[3], "2,-1,,,1.25e-1,,");
        assert_eq!(lines[4], "3,0,5e-1,,,2.5e-1,");
        assert!(lines.iter().all(|l| l.split(',').count() == 7));
    }

    #[test]
    fn well_formed_detects_disorder_and_nan() {
        let mut t = RunTrace::new();
        t.push_iteration(row(2, 1));
        t.push_iteration(row(2, 0));
        assert!(!t.is_well_formed());
        let mut t = RunTrace::new();
        let mut r = row(2, 0);
        r.err_w = Some(f64::NAN);
        t.push_iteration(r);
        assert!(!t.is_well_formed());
    }
}

//! Instantiation of the sufficient conditions for local linear convergence
//! from estimated constants and measured contraction factors.
//!
//! Each inequality is stored with both evaluated sides and its relation, so
//! a verdict can be recomputed from the report alone.

use serde::{Deserialize, Serialize};

use crate::assumptions::ConstantsReport;
use crate::error::{Error, Result};
use crate::ipg::IpgConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<")]
    Less,
    #[serde(rename = "<=")]
    LessEq,
    #[serde(rename = ">=")]
    GreaterEq,
    #[serde(rename = ">")]
    Greater,
}

impl Relation {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Relation::Less => lhs < rhs,
            Relation::LessEq => lhs <= rhs,
            Relation::GreaterEq => lhs >= rhs,
            Relation::Greater => lhs > rhs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// A required input (such as the initial preconditioner error) is missing.
    Unauditable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub id: String,
    pub verdict: Verdict,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub relation: Relation,
    /// The inequality with numbers substituted.
    pub instantiated: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

impl ConditionEntry {
    fn evaluated(id: &str, lhs: f64, relation: Relation, rhs: f64, instantiated: String) -> Self {
        let verdict = if lhs.is_finite() && rhs.is_finite() && relation.holds(lhs, rhs) {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        ConditionEntry {
            id: id.to_string(),
            verdict,
            lhs: Some(lhs),
            rhs: Some(rhs),
            relation,
            instantiated,
            note: None,
        }
    }

    fn unauditable(id: &str, relation: Relation, note: &str) -> Self {
        ConditionEntry {
            id: id.to_string(),
            verdict: Verdict::Unauditable,
            lhs: None,
            rhs: None,
            relation,
            instantiated: String::new(),
            note: Some(note.to_string()),
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// Re-evaluates the stored sides; `None` when unauditable.
    pub fn recompute(&self) -> Option<bool> {
        match (self.lhs, self.rhs) {
            (Some(l), Some(r)) => Some(l.is_finite() && r.is_finite() && self.relation.holds(l, r)),
            _ => None,
        }
    }
}

/// Measured or chosen quantities that are not properties of the model alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditInputs {
    pub rho: f64,
    #[serde(rename = "rho_N")]
    pub rho_n: f64,
    pub mu: f64,
    pub varrho: f64,
    #[serde(rename = "D2")]
    pub d2: f64,
    /// Lower bound on `‖x − w‖` kept by the iterates before convergence.
    pub delta: f64,
    /// Upper bound on the estimation error reached after `d` iterations.
    pub delta_bar: f64,
    /// `‖K₀ − H_x(x₁)⁻¹‖₂`, when the initial state is known.
    pub k0_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedQuantities {
    pub rho: f64,
    #[serde(rename = "rho_N")]
    pub rho_n: f64,
    pub mu: f64,
    /// `(1, 1/ρ)`, the admissible range of `μ`.
    pub mu_range: (f64, f64),
    pub varrho: f64,
    #[serde(rename = "D2")]
    pub d2: f64,
    /// `(ηγ/2)·ϱ`, the bound recorded for `D₁`.
    #[serde(rename = "D1_bound")]
    pub d1_bound: f64,
    pub delta: f64,
    pub delta_bar: f64,
    /// Real-valued lower bound on `d` from condition (i).
    pub d_min: f64,
    /// Smallest integer `d` satisfying condition (i).
    pub d_threshold: u64,
    pub contraction_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub conditions: Vec<ConditionEntry>,
    pub preconditions: Vec<ConditionEntry>,
    pub derived: DerivedQuantities,
    pub all_pass: bool,
}

impl ConditionReport {
    pub fn condition(&self, id: &str) -> Option<&ConditionEntry> {
        self.conditions.iter().chain(&self.preconditions).find(|c| c.id == id)
    }
}

/// `max{1, 1 + log_μ L, (N − 1)·log_μ L}`.
pub fn d_lower_bound(mu: f64, l_dyn: f64, window_n: usize) -> f64 {
    let log = l_dyn.ln() / mu.ln();
    let log = if log.is_nan() { f64::NEG_INFINITY } else { log };
    1.0_f64.max(1.0 + log).max((window_n as f64 - 1.0) * log)
}

/// The per-iteration step-size bound of condition (iii).
pub fn alpha_bound(c: &ConstantsReport, a: &AuditInputs, i: usize) -> f64 {
    let mr = a.mu * a.rho;
    let growth = a.mu.powi(i as i32) * (1.0 - mr) / (2.0 * c.lipschitz_map * (1.0 - mr.powi(i as i32 + 1)));
    (1.0 / c.lambda_max).min(a.varrho.min(a.d2) * growth)
}

/// Evaluates conditions (i)–(v) and the parameter preconditions.
pub fn check_theorem_conditions(constants: &ConstantsReport, config: &IpgConfig, audit: &AuditInputs) -> Result<ConditionReport> {
    config.alpha.validate(config.d)?;
    if config.d == 0 {
        return Err(Error::Config("d must be at least 1".into()));
    }
    let inputs = [audit.rho, audit.rho_n, audit.mu, audit.varrho, audit.d2, audit.delta, audit.delta_bar];
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition(format!("audit inputs must be finite: {audit:?}")));
    }

    let c = constants;
    let a = audit;
    let d = config.d;
    let big_l = c.lipschitz_dynamics;
    let l = c.lipschitz_map;
    let eg = c.eta * c.gamma;
    let mut conditions = Vec::with_capacity(5);

    // (i)
    let d_min = d_lower_bound(a.mu, big_l, c.window_n);
    conditions.push(ConditionEntry::evaluated(
        "i",
        d as f64,
        Relation::GreaterEq,
        d_min,
        format!("d = {d} >= max{{1, 1 + log_{} {big_l}, ({} - 1) log_{} {big_l}}} = {d_min}", a.mu, c.window_n, a.mu),
    ));

    // (ii)
    conditions.push(match a.k0_error {
        Some(k0) => {
            let lhs = eg * a.delta / 2.0 + l * k0;
            let rhs = 1.0 / (2.0 * a.mu);
            ConditionEntry::evaluated(
                "ii",
                lhs,
                Relation::LessEq,
                rhs,
                format!("{}*{}*{}/2 + {l}*{k0} = {lhs} <= 1/(2*{}) = {rhs}", c.eta, c.gamma, a.delta, a.mu),
            )
        }
        None => ConditionEntry::unauditable("ii", Relation::LessEq, "initial preconditioner error unknown"),
    });

    // (iii): the worst iteration by α/bound
    let (worst_i, alpha_w, bound_w) = (0..d)
        .map(|i| (i, config.alpha.step_size(i), alpha_bound(c, a, i)))
        .max_by(|x, y| (x.1 / x.2).total_cmp(&(y.1 / y.2)))
        .expect("d >= 1");
    conditions.push(
        ConditionEntry::evaluated(
            "iii",
            alpha_w,
            Relation::Less,
            bound_w,
            format!("alpha^({worst_i}) = {alpha_w} < {bound_w}"),
        )
        .with_note(format!("tightest of i = 0..{}", d - 1)),
    );

    // (iv): every k >= 1 with a recorded C_k, worst margin kept
    let rho_d = a.rho.powi(d as i32);
    let lbd = big_l * a.delta_bar;
    let iv = (1..c.c_seq.len())
        .map(|k| {
            let ck = c.c_seq[k];
            let tail = a.mu.powi(-(k as i32 - 1)) * (rho_d * eg / 2.0 - a.varrho * eg / 2.0 - eg / (2.0 * a.mu));
            if lbd > 0.0 {
                let lhs = l * ck * c.lipschitz_inverse / lbd;
                let rhs = (1.0 - rho_d) / (2.0 * a.mu * lbd) + tail;
                (k, ck, lhs, rhs, false)
            } else {
                // δ̄ = 0: both sides multiplied by Lδ̄ ≥ 0
                let lhs = l * ck * c.lipschitz_inverse;
                let rhs = (1.0 - rho_d) / (2.0 * a.mu) + lbd * tail;
                (k, ck, lhs, rhs, true)
            }
        })
        .max_by(|x, y| (x.2 - x.3).total_cmp(&(y.2 - y.3)));
    conditions.push(match iv {
        Some((k, ck, lhs, rhs, scaled)) => {
            let e = ConditionEntry::evaluated(
                "iv",
                lhs,
                Relation::LessEq,
                rhs,
                format!("k = {k}: {l}*{ck}*{}/(L*delta_bar) = {lhs} <= {rhs}", c.lipschitz_inverse),
            );
            if scaled {
                e.with_note("L*delta_bar = 0, evaluated multiplied through by L*delta_bar")
            } else {
                e.with_note("tightest k over the reference trajectory")
            }
        }
        None => ConditionEntry::unauditable("iv", Relation::LessEq, "no C_k for k >= 1 in the reference trajectory"),
    });

    // (v)
    conditions.push(match c.c_seq.first() {
        Some(&c0) => {
            let lhs = l * c0 * c.lipschitz_inverse;
            let delta_term = if a.delta > 0.0 {
                a.delta * (eg / 2.0 - eg * lbd / (2.0 * a.delta) - l * a.d2)
            } else {
                -eg * lbd / 2.0
            };
            let rhs = (1.0 - a.rho_n.powi(d as i32)) * (1.0 / (2.0 * a.mu) - eg * a.delta / 2.0) + delta_term;
            ConditionEntry::evaluated(
                "v",
                lhs,
                Relation::LessEq,
                rhs,
                format!("{l}*{c0}*{} = {lhs} <= {rhs}", c.lipschitz_inverse),
            )
        }
        None => ConditionEntry::unauditable("v", Relation::LessEq, "C_0 unavailable"),
    });

    let ratio = if a.delta > 0.0 { lbd / a.delta } else { f64::INFINITY };
    let preconditions = vec![
        ConditionEntry::evaluated("mu_lower", a.mu, Relation::Greater, 1.0, format!("mu = {} > 1", a.mu)),
        ConditionEntry::evaluated(
            "mu_upper",
            a.mu,
            Relation::Less,
            1.0 / a.rho,
            format!("mu = {} < 1/rho = {}", a.mu, 1.0 / a.rho),
        ),
        ConditionEntry::evaluated(
            "varrho",
            a.varrho,
            Relation::Less,
            1.0 - a.rho,
            format!("varrho = {} < 1 - rho = {}", a.varrho, 1.0 - a.rho),
        ),
        ConditionEntry::evaluated(
            "delta_bar",
            a.delta_bar,
            Relation::Less,
            if big_l > 0.0 { a.delta / big_l } else { f64::INFINITY },
            format!("delta_bar = {} < delta/L = {}/{big_l}", a.delta_bar, a.delta),
        ),
        ConditionEntry::evaluated(
            "D2",
            a.d2,
            Relation::Less,
            eg * (1.0 - ratio) / (2.0 * l),
            format!("D2 = {} < eta*gamma*(1 - L*delta_bar/delta)/(2l) = {}", a.d2, eg * (1.0 - ratio) / (2.0 * l)),
        ),
        ConditionEntry::evaluated(
            "inv_mu",
            1.0 / a.mu,
            Relation::Less,
            1.0 - a.varrho,
            format!("1/mu = {} < 1 - varrho = {}", 1.0 / a.mu, 1.0 - a.varrho),
        ),
    ];

    let all_pass = conditions.iter().chain(&preconditions).all(ConditionEntry::passed);
    Ok(ConditionReport {
        conditions,
        preconditions,
        derived: DerivedQuantities {
            rho: a.rho,
            rho_n: a.rho_n,
            mu: a.mu,
            mu_range: (1.0, 1.0 / a.rho),
            varrho: a.varrho,
            d2: a.d2,
            d1_bound: eg / 2.0 * a.varrho,
            delta: a.delta,
            delta_bar: a.delta_bar,
            d_min,
            d_threshold: d_min.ceil() as u64,
            contraction_holds: a.rho < 1.0,
        },
        all_pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ipg::AlphaSchedule;
    use crate::{Matrix, Vector};
    use approx::assert_relative_eq;

    fn constants(big_l: f64, l: f64, gamma: f64, eta: f64, l2: f64, c_seq: Vec<f64>, window_n: usize) -> ConstantsReport {
        ConstantsReport {
            system: "test".into(),
            window_n,
            lipschitz_dynamics: big_l,
            lipschitz_map: l,
            gamma,
            lambda_max: 1.0,
            lambda_min: 1.0,
            eta,
            lipschitz_inverse: l2,
            c_seq,
            beta_required: 0.0,
            eigenvalues_positive: true,
            complex_eigenvalues: false,
            singular_samples: 0,
            inverse_constants_reliable: true,
            points_evaluated: 0,
            pairs_evaluated: 0,
            method: "sampled lower bounds".into(),
        }
    }

    fn audit(mu: f64, delta: f64, k0: Option<f64>) -> AuditInputs {
        AuditInputs {
            rho: 0.5,
            rho_n: 0.5,
            mu,
            varrho: 0.25,
            d2: 0.1,
            delta,
            delta_bar: 0.01,
            k0_error: k0,
        }
    }

    fn config(d: usize) -> IpgConfig {
        IpgConfig::new(d, AlphaSchedule::Constant { value: 0.01 }, Vector::zeros(1), Matrix::identity(1, 1))
    }

    #[test]
    fn condition_ii_example() {
        // scalar halving system: γ = 0, η = 1, l = 1, μ = 1.25, ‖K₀ − 1‖ = 0.3
        let c = constants(0.5, 1.0, 0.0, 1.0, 0.0, vec![0.0], 1);
        let r = check_theorem_conditions(&c, &config(3), &audit(1.25, 0.2, Some(0.3))).unwrap();
        let ii = r.condition("ii").unwrap();
        assert!((ii.lhs.unwrap() - 0.3).abs() < 1e-12);
        assert!((ii.rhs.unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(ii.verdict, Verdict::Pass);
    }

    #[test]
    fn condition_iv_trivial_when_trajectory_is_fixed() {
        let c = constants(0.5, 1.0, 0.0, 1.0, 0.0, vec![0.0; 6], 1);
        let r = check_theorem_conditions(&c, &config(3), &audit(1.25, 0.2, Some(0.0))).unwrap();
        let iv = r.condition("iv").unwrap();
        assert_eq!(iv.lhs, Some(0.0));
        assert!(iv.rhs.unwrap() > 0.0);
        assert_eq!(iv.verdict, Verdict::Pass);
    }

    #[test]
    fn condition_i_threshold() {
        let c = constants(2.0, 1.0, 0.0, 1.0, 0.0, vec![0.0], 2);
        let r = check_theorem_conditions(&c, &config(1), &audit(1.5, 0.2, None)).unwrap();
        let i = r.condition("i").unwrap();
        let expected = 1.0 + 2.0_f64.ln() / 1.5_f64.ln();
        assert_relative_eq!(i.rhs.unwrap(), expected, epsilon = 1e-12);
        assert!((expected - 2.7095).abs() < 1e-4);
        assert_eq!(i.verdict, Verdict::Fail);
        assert_eq!(r.derived.d_threshold, 3);
        assert_eq!(r.condition("ii").unwrap().verdict, Verdict::Unauditable);
        assert!(!r.all_pass);
    }

    #[test]
    fn contracting_dynamics_need_one_iteration() {
        assert_eq!(d_lower_bound(1.5, 0.5, 4), 1.0);
        assert_eq!(d_lower_bound(1.5, 0.0, 4), 1.0);
    }

    #[test]
    fn verdicts_recompute_from_json() {
        let c = constants(2.0, 1.0, 0.5, 1.0, 0.3, vec![0.1, 0.05, 0.02], 2);
        let r = check_theorem_conditions(&c, &config(4), &audit(1.5, 0.2, Some(0.1))).unwrap();
        let back: ConditionReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        for e in back.conditions.iter().chain(&back.preconditions) {
            if let Some(ok) = e.recompute() {
                assert_eq!(ok, e.passed(), "{}", e.id);
            }
        }
    }

    #[test]
    fn report_json_names() {
        let c = constants(0.5, 1.0, 0.0, 1.0, 0.0, vec![0.0], 1);
        let r = check_theorem_conditions(&c, &config(1), &audit(1.25, 0.2, None)).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in ["rho", "rho_N", "mu", "varrho", "D2", "delta", "delta_bar", "d_min", "D1_bound"] {
            assert!(v["derived"].get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn non_finite_audit_is_rejected() {
        let c = constants(0.5, 1.0, 0.0, 1.0, 0.0, vec![0.0], 1);
        let mut a = audit(1.25, 0.2, None);
        a.rho = f64::NAN;
        assert!(check_theorem_conditions(&c, &config(1), &a).is_err());
    }
}

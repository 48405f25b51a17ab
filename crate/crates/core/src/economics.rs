//! Incentive and adoption model for replication certification.
//!
//! * Author compliance: a manipulating author gets `B(1-d) - dS`, where the
//!   detection probability `d` is `p*pi` under manual review and `1-eps` under
//!   TEE attestation. The author complies iff `dS >= B(1-d)`.
//! * Journal adoption: TEE costs `c_A` per accepted paper, manual review `c_J`
//!   per submission; adoption iff `c_A * alpha < c_J` (strict).
//! * Certification market: stringency `v` has convex cost `C(v) = k v^m`
//!   against a linear benefit `b v`; the manual optimum solves `C'(v) = b`.
//!   TEE offers `v = 1` at cost `c_A`.
//!
//! Monetary quantities are [`Decimal`] and rounded half-up to 4 places;
//! probabilities and the stringency model use `f64`.

use std::fmt;

use rust_decimal::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runner::round4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EconError {
    #[error("parameter {name} = {value} is outside {range}")]
    OutOfRange {
        name: &'static str,
        value: String,
        range: &'static str,
    },
}

fn out_of_range(name: &'static str, value: impl fmt::Display, range: &'static str) -> EconError {
    EconError::OutOfRange {
        name,
        value: value.to_string(),
        range,
    }
}

fn unit_interval(name: &'static str, v: f64) -> Result<(), EconError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(out_of_range(name, v, "[0, 1]"))
    }
}

fn positive(name: &'static str, v: f64) -> Result<(), EconError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(out_of_range(name, v, "(0, inf)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Manual,
    Tee,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Manual => "manual",
            Regime::Tee => "tee",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplianceParams {
    /// Value of publication.
    pub b: f64,
    /// Sanction on detection.
    pub s: f64,
    /// Probability the editor scrutinizes the package.
    pub p: f64,
    /// Probability manipulation is caught given scrutiny.
    pub pi: f64,
    /// Probability a manipulated run still yields a valid attestation.
    pub epsilon: f64,
}

impl ComplianceParams {
    pub fn new(b: f64, s: f64, p: f64, pi: f64, epsilon: f64) -> Result<Self, EconError> {
        positive("B", b)?;
        positive("S", s)?;
        unit_interval("p", p)?;
        unit_interval("pi", pi)?;
        unit_interval("epsilon", epsilon)?;
        Ok(Self { b, s, p, pi, epsilon })
    }

    pub fn d_manual(&self) -> f64 {
        self.p * self.pi
    }

    pub fn d_tee(&self) -> f64 {
        1.0 - self.epsilon
    }

    pub fn detection(&self, regime: Regime) -> f64 {
        match regime {
            Regime::Manual => self.d_manual(),
            Regime::Tee => self.d_tee(),
        }
    }

    /// Smallest deterring sanction under `regime`.
    pub fn min_sanction(&self, regime: Regime) -> SanctionBound {
        match regime {
            Regime::Manual => min_sanction(self.b, self.d_manual()),
            // B*eps/(1-eps), evaluated on eps directly
            Regime::Tee if self.epsilon >= 1.0 => SanctionBound::Unbounded,
            Regime::Tee => SanctionBound::Finite(self.b * self.epsilon / (1.0 - self.epsilon)),
        }
    }
}

/// Expected payoff of submitting a manipulated package: `B(1-d) - dS`.
pub fn manipulate_payoff(params: &ComplianceParams, d: f64) -> f64 {
    params.b * (1.0 - d) - d * params.s
}

/// Whether the author is deterred. Ties count as compliance.
pub fn complies(params: &ComplianceParams, regime: Regime) -> bool {
    match regime {
        Regime::Manual => {
            let d = params.d_manual();
            d * params.s >= params.b * (1.0 - d)
        }
        Regime::Tee => (1.0 - params.epsilon) * params.s >= params.b * params.epsilon,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum SanctionBound {
    Finite(f64),
    Unbounded,
}

impl SanctionBound {
    /// `s >= bound`; nothing satisfies an unbounded requirement.
    pub fn is_met_by(&self, s: f64) -> bool {
        match self {
            SanctionBound::Finite(bound) => s >= *bound,
            SanctionBound::Unbounded => false,
        }
    }
}

impl fmt::Display for SanctionBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SanctionBound::Finite(v) => write!(f, "{v:.6}"),
            SanctionBound::Unbounded => f.write_str("unbounded"),
        }
    }
}

/// `B(1-d)/d` for `d > 0`; no finite sanction deters when `d = 0`.
pub fn min_sanction(b: f64, d: f64) -> SanctionBound {
    if d <= 0.0 {
        SanctionBound::Unbounded
    } else {
        SanctionBound::Finite(b * (1.0 - d) / d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdoptionParams {
    /// TEE cost per accepted paper (USD).
    pub c_a: Decimal,
    /// Manual verification cost per submission (USD).
    pub c_j: Decimal,
    /// Acceptance rate in (0, 1].
    pub alpha: Decimal,
    /// Submissions per period.
    pub n_s: u64,
}

impl AdoptionParams {
    pub fn new(c_a: Decimal, c_j: Decimal, alpha: Decimal, n_s: u64) -> Result<Self, EconError> {
        if c_a <= Decimal::ZERO {
            return Err(out_of_range("c_A", c_a, "(0, inf)"));
        }
        if c_j <= Decimal::ZERO {
            return Err(out_of_range("c_J", c_j, "(0, inf)"));
        }
        if alpha <= Decimal::ZERO || alpha > Decimal::ONE {
            return Err(out_of_range("alpha", alpha, "(0, 1]"));
        }
        if n_s == 0 {
            return Err(out_of_range("N_s", n_s, "[1, inf)"));
        }
        Ok(Self { c_a, c_j, alpha, n_s })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdoptionOutcome {
    #[serde(with = "rust_decimal::serde::float")]
    pub tee_cost_per_submission: Decimal,
    /// Manual cost over TEE cost, per submission.
    #[serde(with = "rust_decimal::serde::float")]
    pub ratio: Decimal,
    pub adopts: bool,
    /// Acceptance rate below which TEE is cheaper: `c_J / c_A`.
    #[serde(with = "rust_decimal::serde::float")]
    pub alpha_bound: Decimal,
    #[serde(with = "rust_decimal::serde::float")]
    pub tee_total_cost: Decimal,
    #[serde(with = "rust_decimal::serde::float")]
    pub manual_total_cost: Decimal,
}

pub fn adoption(params: &AdoptionParams) -> AdoptionOutcome {
    let per_submission = params.c_a * params.alpha;
    let n = Decimal::from(params.n_s);
    AdoptionOutcome {
        tee_cost_per_submission: round4(per_submission),
        ratio: round4(params.c_j / per_submission),
        adopts: per_submission < params.c_j,
        alpha_bound: round4(params.c_j / params.c_a),
        tee_total_cost: round4(per_submission * n),
        manual_total_cost: round4(params.c_j * n),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StringencyParams {
    /// Scale of `C(v) = k v^m`.
    pub k: f64,
    /// Curvature of `C(v) = k v^m`; must exceed 1.
    pub m: f64,
    /// Marginal benefit of stringency.
    pub b: f64,
}

impl StringencyParams {
    pub fn new(k: f64, m: f64, b: f64) -> Result<Self, EconError> {
        positive("k", k)?;
        if !(m.is_finite() && m > 1.0) {
            return Err(out_of_range("m", m, "(1, inf)"));
        }
        positive("b", b)?;
        Ok(Self { k, m, b })
    }

    pub fn cost(&self, v: f64) -> f64 {
        self.k * v.powf(self.m)
    }

    pub fn marginal_cost(&self, v: f64) -> f64 {
        self.k * self.m * v.powf(self.m - 1.0)
    }

    /// Solves `C'(v) = b`, clipped to `[0, 1]`.
    pub fn manual_optimum(&self) -> f64 {
        (self.b / (self.k * self.m)).powf(1.0 / (self.m - 1.0)).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StringencyOutcome {
    pub v_star: f64,
    pub regime_cost: f64,
    pub uses_tee: bool,
    pub manual_v_star: f64,
    pub manual_cost: f64,
}

pub fn stringency_optimum(params: &StringencyParams, tee_available: bool, c_a: f64) -> StringencyOutcome {
    let manual_v = params.manual_optimum();
    let manual_cost = params.cost(manual_v);
    let tee_wins = tee_available && c_a < params.cost(1.0);
    let (v_star, regime_cost) = if tee_wins {
        (1.0, c_a)
    } else {
        (manual_v, manual_cost)
    };
    StringencyOutcome {
        v_star,
        regime_cost,
        uses_tee: tee_wins,
        manual_v_star: manual_v,
        manual_cost,
    }
}

/// Inputs for the manual-vs-TEE cost comparison table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonInput {
    pub adoption: AdoptionParams,
    /// Observed spread of per-paper TEE cost across providers.
    pub tee_cost_range: (Decimal, Decimal),
    /// Extra storage cost per package.
    pub storage_range: (Decimal, Decimal),
    pub manual_verification_time: String,
    pub tee_verification_time: String,
}

impl Default for ComparisonInput {
    fn default() -> Self {
        let d = |s: &str| Decimal::from_str_exact(s).expect("literal decimal");
        Self {
            adoption: AdoptionParams {
                c_a: d("1.57"),
                c_j: d("79"),
                alpha: d("0.08"),
                n_s: 1,
            },
            tee_cost_range: (d("1.35"), d("1.80")),
            storage_range: (d("0.05"), d("0.30")),
            manual_verification_time: "weeks to months".into(),
            tee_verification_time: "milliseconds".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub dimension: String,
    pub manual: String,
    pub tee: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostComparison {
    pub rows: Vec<ComparisonRow>,
    pub adoption: AdoptionOutcome,
}

/// `$79`, `$1.80`, `$0.1256`: integers bare, otherwise at least two places.
pub fn format_usd(amount: Decimal) -> String {
    let n = amount.normalize();
    if n.scale() == 0 {
        format!("${n}")
    } else if n.scale() == 1 {
        format!("${:.2}", n)
    } else {
        format!("${n}")
    }
}

pub fn cost_comparison(input: &ComparisonInput) -> CostComparison {
    let a = &input.adoption;
    let outcome = adoption(a);
    let (lo, hi) = input.tee_cost_range;
    let (s_lo, s_hi) = input.storage_range;
    let range = |lo: Decimal, hi: Decimal| {
        if lo == hi {
            format_usd(lo)
        } else {
            format!("{}–{}", format_usd(lo), format_usd(hi))
        }
    };

    let row = |dimension: &str, manual: String, tee: String| ComparisonRow {
        dimension: dimension.to_string(),
        manual,
        tee,
    };
    let rows = vec![
        row(
            "Per-paper cost (journal)",
            format!("{} per submission", format_usd(a.c_j)),
            format!(
                "{} per accepted paper (+{} storage)",
                range(lo, hi),
                range(s_lo, s_hi)
            ),
        ),
        row(
            "Expected cost per submission",
            format_usd(a.c_j),
            format!(
                "{} (c_A = {} at alpha = {})",
                format_usd(outcome.tee_cost_per_submission),
                format_usd(a.c_a),
                a.alpha.normalize()
            ),
        ),
        row(
            "Manual / TEE cost ratio",
            "1".into(),
            format!(
                "{} ({})",
                outcome.ratio.round_dp(1),
                if outcome.adopts { "TEE adopted" } else { "TEE not adopted" }
            ),
        ),
        row(
            "Financial cost borne by",
            "journal, or authors through a fee".into(),
            "journal".into(),
        ),
        row(
            "Operational cost borne by",
            "data editor".into(),
            "author".into(),
        ),
        row(
            "Detection probability",
            "p*pi < 1".into(),
            "1 - eps, close to 1".into(),
        ),
        row(
            "Proprietary data",
            "often exempted from checks".into(),
            "covered; data never leaves the enclave".into(),
        ),
        row(
            "Verification time",
            input.manual_verification_time.clone(),
            input.tee_verification_time.clone(),
        ),
        row(
            "Auditability",
            "not independently checkable".into(),
            "public proof, tamper-evident archive".into(),
        ),
        row(
            "Scalability",
            "bounded by editor capacity".into(),
            "bounded by cloud capacity".into(),
        ),
    ];
    CostComparison {
        rows,
        adoption: outcome,
    }
}

impl CostComparison {
    pub fn render_text(&self) -> String {
        let headers = ["Dimension", "Manual data editor", "TEE attestation"];
        let width = |i: usize| {
            self.rows
                .iter()
                .map(|r| [&r.dimension, &r.manual, &r.tee][i].chars().count())
                .chain(std::iter::once(headers[i].len()))
                .max()
                .unwrap_or(0)
        };
        let (w0, w1) = (width(0), width(1));
        let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w.saturating_sub(s.chars().count())));
        let mut out = format!(
            "{}  {}  {}\n",
            pad(headers[0], w0),
            pad(headers[1], w1),
            headers[2]
        );
        out.push_str(&format!("{}\n", "-".repeat(w0 + w1 + 4 + width(2))));
        for r in &self.rows {
            out.push_str(&format!("{}  {}  {}\n", pad(&r.dimension, w0), pad(&r.manual, w1), r.tee));
        }
        out
    }
}

//! Aggregates over pilot trial records (provider, paper, outcome, cost, runtime).

use std::fmt::Write as _;

use rust_decimal::prelude::*;
use rust_decimal::MathematicalOps;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runner::round4;

/// First batch of pilot trials, bundled with the crate.
pub const BUNDLED_TRIALS_CSV: &str = include_str!("../../../fixtures/mnsc_vol70_batch1.csv");

/// TDX runtime overhead over a plain VM, in percent. Reported, not measured here.
pub const OVERHEAD_PCT_RANGE: (u32, u32) = (7, 12);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("row {row}: {reason}")]
    CsvParseError { row: usize, reason: String },
    #[error("row {row}: invalid {field}")]
    InvariantViolation { row: usize, field: &'static str },
    #[error("no records to aggregate")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Provider {
    Google,
    Azure,
}

impl Provider {
    pub const ALL: [Provider; 2] = [Provider::Google, Provider::Azure];

    pub fn as_str(&self) -> &'static str {
        match self {
            Provider::Google => "Google",
            Provider::Azure => "Azure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrialStatus {
    Success,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    /// 1-based line number in the source file (the header is line 1).
    pub row: usize,
    pub provider: Provider,
    pub paper_id: String,
    pub status: TrialStatus,
    pub cost_usd: Option<Decimal>,
    pub runtime_minutes: Option<Decimal>,
    pub department: String,
    pub language: String,
}

#[derive(Deserialize)]
struct RawRow {
    provider: String,
    paper_id: String,
    status: String,
    cost_usd: String,
    runtime_minutes: String,
    #[serde(default)]
    department: String,
    #[serde(default)]
    language: String,
}

fn parse_amount(raw: &str, row: usize, field: &'static str) -> Result<Option<Decimal>, EvalError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    match Decimal::from_str_exact(raw) {
        Ok(v) if !v.is_sign_negative() => Ok(Some(v)),
        _ => Err(EvalError::InvariantViolation { row, field }),
    }
}

pub fn ingest_csv(bytes: &[u8]) -> Result<Vec<EvaluationRecord>, EvalError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let mut records = Vec::new();
    for (i, result) in reader.deserialize::<RawRow>().enumerate() {
        let fallback_row = i + 2;
        let raw = result.map_err(|e| EvalError::CsvParseError {
            row: e
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or(fallback_row),
            reason: e.to_string(),
        })?;
        let row = fallback_row;
        let provider = match raw.provider.trim() {
            "Google" => Provider::Google,
            "Azure" => Provider::Azure,
            _ => return Err(EvalError::InvariantViolation { row, field: "provider" }),
        };
        let status = match raw.status.trim() {
            "Success" => TrialStatus::Success,
            "Fail" => TrialStatus::Fail,
            _ => return Err(EvalError::InvariantViolation { row, field: "status" }),
        };
        let paper_id = raw.paper_id.trim().to_string();
        if paper_id.is_empty() {
            return Err(EvalError::InvariantViolation { row, field: "paper_id" });
        }
        let cost_usd = parse_amount(&raw.cost_usd, row, "cost_usd")?;
        let runtime_minutes = parse_amount(&raw.runtime_minutes, row, "runtime_minutes")?;
        if status == TrialStatus::Success && cost_usd.is_none() {
            return Err(EvalError::InvariantViolation { row, field: "cost_usd" });
        }
        records.push(EvaluationRecord {
            row,
            provider,
            paper_id,
            status,
            cost_usd,
            runtime_minutes,
            department: raw.department.trim().to_string(),
            language: raw.language.trim().to_string(),
        });
    }
    Ok(records)
}

pub fn bundled_records() -> Vec<EvaluationRecord> {
    ingest_csv(BUNDLED_TRIALS_CSV.as_bytes()).expect("bundled fixture is valid")
}

/// Runtime summary in hours. `sd` is the sample standard deviation and `sem`
/// the standard error of the mean; both need at least two samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub samples: usize,
    #[serde(with = "rust_decimal::serde::float")]
    pub mean_hours: Decimal,
    #[serde(with = "rust_decimal::serde::float_option")]
    pub sd_hours: Option<Decimal>,
    #[serde(with = "rust_decimal::serde::float_option")]
    pub sem_hours: Option<Decimal>,
}

/// Summary of costs over successful runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostStats {
    #[serde(with = "rust_decimal::serde::float")]
    pub mean: Decimal,
    #[serde(with = "rust_decimal::serde::float")]
    pub min: Decimal,
    #[serde(with = "rust_decimal::serde::float")]
    pub max: Decimal,
    #[serde(with = "rust_decimal::serde::float")]
    pub total: Decimal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderStats {
    pub provider: Provider,
    pub success_count: usize,
    pub fail_count: usize,
    #[serde(with = "rust_decimal::serde::float")]
    pub success_rate: Decimal,
    pub cost: Option<CostStats>,
    pub runtime: Option<RuntimeStats>,
}

/// Figures the original authors reported for their full evaluation. Shown
/// beside the computed values, never substituted for them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportedFigures {
    pub provider: Provider,
    #[serde(with = "rust_decimal::serde::float")]
    pub cost_mean: Decimal,
    pub first_run_success_pct: u32,
}

pub fn reported_figures() -> Vec<ReportedFigures> {
    vec![
        ReportedFigures {
            provider: Provider::Google,
            cost_mean: Decimal::new(180, 2),
            first_run_success_pct: 68,
        },
        ReportedFigures {
            provider: Provider::Azure,
            cost_mean: Decimal::new(135, 2),
            first_run_success_pct: 95,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub providers: Vec<ProviderStats>,
    pub overall_runtime: Option<RuntimeStats>,
    pub overhead_pct_range: (u32, u32),
    pub reported: Vec<ReportedFigures>,
}

impl AggregateReport {
    pub fn provider(&self, p: Provider) -> Option<&ProviderStats> {
        self.providers.iter().find(|s| s.provider == p)
    }

    pub fn render_text(&self) -> String {
        let opt = |v: Option<Decimal>| v.map(|d| d.to_string()).unwrap_or_else(|| "-".into());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>7} {:>4} {:>7} {:>9} {:>8} {:>8} {:>4} {:>9} {:>8} {:>8}",
            "provider", "success", "fail", "rate", "cost_mean", "cost_min", "cost_max", "n_rt", "rt_mean_h", "rt_sd_h", "rt_sem_h"
        );
        for s in &self.providers {
            let c = s.cost.as_ref();
            let r = s.runtime.as_ref();
            let _ = writeln!(
                out,
                "{:<8} {:>7} {:>4} {:>7} {:>9} {:>8} {:>8} {:>4} {:>9} {:>8} {:>8}",
                s.provider.as_str(),
                s.success_count,
                s.fail_count,
                s.success_rate,
                opt(c.map(|c| c.mean)),
                opt(c.map(|c| c.min)),
                opt(c.map(|c| c.max)),
                r.map(|r| r.samples).unwrap_or(0),
                opt(r.map(|r| r.mean_hours)),
                opt(r.and_then(|r| r.sd_hours)),
                opt(r.and_then(|r| r.sem_hours)),
            );
        }
        if let Some(r) = &self.overall_runtime {
            let _ = writeln!(
                out,
                "{:<8} {:>7} {:>4} {:>7} {:>9} {:>8} {:>8} {:>4} {:>9} {:>8} {:>8}",
                "overall", "", "", "", "", "", "", r.samples,
                r.mean_hours,
                opt(r.sd_hours),
                opt(r.sem_hours),
            );
        }
        let _ = writeln!(
            out,
            "\nTEE runtime overhead (reported, not measured): {}-{}%",
            self.overhead_pct_range.0, self.overhead_pct_range.1
        );
        let _ = writeln!(out, "Reported for the full evaluation (not computed from this data):");
        for f in &self.reported {
            let _ = writeln!(
                out,
                "  {:<8} mean cost ${:.2}, first-run success {}%",
                f.provider.as_str(),
                f.cost_mean,
                f.first_run_success_pct
            );
        }
        out
    }
}

fn runtime_stats<'a>(minutes: impl Iterator<Item = &'a Decimal>) -> Option<RuntimeStats> {
    let xs: Vec<Decimal> = minutes.copied().collect();
    if xs.is_empty() {
        return None;
    }
    let n = Decimal::from(xs.len());
    let sum: Decimal = xs.iter().sum();
    let sixty = Decimal::from(60);
    let mean_hours = round4(sum / n / sixty);
    // n*sum(x^2) - sum(x)^2 is exact, so the spread does not depend on order
    let (sd, sem) = if xs.len() >= 2 {
        let sum_sq: Decimal = xs.iter().map(|x| x * x).sum();
        let var_minutes = (n * sum_sq - sum * sum) / (n * (n - Decimal::ONE));
        let sd_minutes = var_minutes.max(Decimal::ZERO).sqrt().unwrap_or(Decimal::ZERO);
        let sd_hours = sd_minutes / sixty;
        let sem_hours = sd_hours / n.sqrt().unwrap_or(Decimal::ONE);
        (Some(round4(sd_hours)), Some(round4(sem_hours)))
    } else {
        (None, None)
    };
    Some(RuntimeStats {
        samples: xs.len(),
        mean_hours,
        sd_hours: sd,
        sem_hours: sem,
    })
}

fn cost_stats<'a>(costs: impl Iterator<Item = &'a Decimal>) -> Option<CostStats> {
    let xs: Vec<Decimal> = costs.copied().collect();
    let min = *xs.iter().min()?;
    let max = *xs.iter().max()?;
    let total: Decimal = xs.iter().sum();
    Some(CostStats {
        mean: round4(total / Decimal::from(xs.len())),
        min,
        max,
        total,
    })
}

/// Cost statistics use successful runs only. Runtime statistics use
/// successful runs that recorded a runtime.
pub fn aggregate(records: &[EvaluationRecord]) -> Result<AggregateReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let successes = |p: Provider| {
        records
            .iter()
            .filter(move |r| r.provider == p && r.status == TrialStatus::Success)
    };
    let mut providers = Vec::new();
    for p in Provider::ALL {
        let success_count = successes(p).count();
        let fail_count = records
            .iter()
            .filter(|r| r.provider == p && r.status == TrialStatus::Fail)
            .count();
        if success_count + fail_count == 0 {
            continue;
        }
        providers.push(ProviderStats {
            provider: p,
            success_count,
            fail_count,
            success_rate: round4(Decimal::from(success_count) / Decimal::from(success_count + fail_count)),
            cost: cost_stats(successes(p).filter_map(|r| r.cost_usd.as_ref())),
            runtime: runtime_stats(successes(p).filter_map(|r| r.runtime_minutes.as_ref())),
        });
    }
    let overall_runtime = runtime_stats(
        records
            .iter()
            .filter(|r| r.status == TrialStatus::Success)
            .filter_map(|r| r.runtime_minutes.as_ref()),
    );
    Ok(AggregateReport {
        providers,
        overall_runtime,
        overhead_pct_range: OVERHEAD_PCT_RANGE,
        reported: reported_figures(),
    })
}

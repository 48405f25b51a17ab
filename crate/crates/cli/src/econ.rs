use std::fs;
use std::path::Path;
use std::process::ExitCode;

use attestrep::economics::{
    adoption, complies, cost_comparison, manipulate_payoff, stringency_optimum, AdoptionParams, ComparisonInput,
    ComplianceParams, Regime, SanctionBound, StringencyParams,
};
use attestrep::evaluation::{aggregate, ingest_csv, BUNDLED_TRIALS_CSV};
use clap::Subcommand;
use rust_decimal::Decimal;
use serde::Serialize;

use crate::output::{print_json, print_pairs};
use crate::{CliError, CliResult};

#[derive(Debug, Subcommand)]
pub enum EconCommand {
    /// Whether an author is deterred from manipulating, under each regime.
    Comply {
        /// Value of publication.
        #[arg(long)]
        b: f64,
        /// Sanction on detection.
        #[arg(long)]
        s: f64,
        /// Probability the editor scrutinizes the package.
        #[arg(long)]
        p: f64,
        /// Probability manipulation is caught under scrutiny.
        #[arg(long)]
        pi: f64,
        /// Probability a manipulated run still attests.
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
    },
    /// Whether a journal adopts TEE verification.
    Adopt {
        /// TEE cost per accepted paper, USD.
        #[arg(long = "c-a")]
        c_a: Decimal,
        /// Manual verification cost per submission, USD.
        #[arg(long = "c-j")]
        c_j: Decimal,
        /// Acceptance rate.
        #[arg(long)]
        alpha: Decimal,
        /// Submissions per period.
        #[arg(long = "n-s", default_value_t = 1)]
        n_s: u64,
    },
    /// Optimal verification stringency with cost k*v^m and benefit b*v.
    Stringency {
        #[arg(long)]
        k: f64,
        #[arg(long)]
        m: f64,
        #[arg(long)]
        b: f64,
        /// TEE cost per paper; TEE is unavailable when omitted.
        #[arg(long = "c-a")]
        c_a: Option<f64>,
    },
    /// Manual versus TEE verification comparison table.
    Table {
        #[arg(long = "c-a", default_value = "1.57")]
        c_a: Decimal,
        #[arg(long = "c-j", default_value = "79")]
        c_j: Decimal,
        #[arg(long, default_value = "0.08")]
        alpha: Decimal,
        #[arg(long, default_value = "1.35")]
        tee_min: Decimal,
        #[arg(long, default_value = "1.80")]
        tee_max: Decimal,
        #[arg(long, default_value = "0.05")]
        storage_min: Decimal,
        #[arg(long, default_value = "0.30")]
        storage_max: Decimal,
        #[arg(long, default_value = "weeks to months")]
        manual_time: String,
        #[arg(long, default_value = "milliseconds")]
        tee_time: String,
    },
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Serialize)]
struct RegimeOutcome {
    regime: Regime,
    detection: f64,
    complies: bool,
    min_sanction: SanctionBound,
    manipulate_payoff: f64,
}

pub fn run(cmd: EconCommand, json: bool) -> CliResult {
    match cmd {
        EconCommand::Comply { b, s, p, pi, epsilon } => {
            let params = ComplianceParams::new(b, s, p, pi, epsilon).map_err(usage)?;
            let rows: Vec<RegimeOutcome> = [Regime::Manual, Regime::Tee]
                .into_iter()
                .map(|regime| {
                    let d = params.detection(regime);
                    RegimeOutcome {
                        regime,
                        detection: d,
                        complies: complies(&params, regime),
                        min_sanction: params.min_sanction(regime),
                        manipulate_payoff: manipulate_payoff(&params, d),
                    }
                })
                .collect();
            if json {
                print_json(&rows);
            } else {
                println!("{:<7} {:>10} {:>9} {:>16} {:>16}", "regime", "detection", "complies", "min_sanction", "payoff_if_cheat");
                for r in &rows {
                    println!(
                        "{:<7} {:>10.6} {:>9} {:>16} {:>16.6}",
                        r.regime.to_string(),
                        r.detection,
                        r.complies,
                        r.min_sanction.to_string(),
                        r.manipulate_payoff
                    );
                }
            }
        }
        EconCommand::Adopt { c_a, c_j, alpha, n_s } => {
            let out = adoption(&AdoptionParams::new(c_a, c_j, alpha, n_s).map_err(usage)?);
            if json {
                print_json(&out);
            } else {
                print_pairs(&[
                    ("tee_cost_per_submission", out.tee_cost_per_submission.to_string()),
                    ("ratio", out.ratio.to_string()),
                    ("adopts", out.adopts.to_string()),
                    ("alpha_bound", out.alpha_bound.to_string()),
                    ("tee_total_cost", out.tee_total_cost.to_string()),
                    ("manual_total_cost", out.manual_total_cost.to_string()),
                ]);
            }
        }
        EconCommand::Stringency { k, m, b, c_a } => {
            let params = StringencyParams::new(k, m, b).map_err(usage)?;
            if c_a.is_some_and(|c| !(c.is_finite() && c >= 0.0)) {
                return Err(usage("--c-a must be a non-negative number"));
            }
            let out = stringency_optimum(&params, c_a.is_some(), c_a.unwrap_or(0.0));
            if json {
                print_json(&out);
            } else {
                print_pairs(&[
                    ("v_star", out.v_star.to_string()),
                    ("regime_cost", out.regime_cost.to_string()),
                    ("uses_tee", out.uses_tee.to_string()),
                    ("manual_v_star", out.manual_v_star.to_string()),
                    ("manual_cost", out.manual_cost.to_string()),
                ]);
            }
        }
        EconCommand::Table {
            c_a,
            c_j,
            alpha,
            tee_min,
            tee_max,
            storage_min,
            storage_max,
            manual_time,
            tee_time,
        } => {
            if tee_min > tee_max || storage_min > storage_max || storage_min < Decimal::ZERO {
                return Err(usage("ranges must be ordered and non-negative"));
            }
            let input = ComparisonInput {
                adoption: AdoptionParams::new(c_a, c_j, alpha, 1).map_err(usage)?,
                tee_cost_range: (tee_min, tee_max),
                storage_range: (storage_min, storage_max),
                manual_verification_time: manual_time,
                tee_verification_time: tee_time,
            };
            let table = cost_comparison(&input);
            if json {
                print_json(&table);
            } else {
                print!("{}", table.render_text());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn report(csv: Option<&Path>, json: bool) -> CliResult {
    let bytes = match csv {
        Some(path) => fs::read(path)?,
        None => BUNDLED_TRIALS_CSV.as_bytes().to_vec(),
    };
    let report = aggregate(&ingest_csv(&bytes)?)?;
    if json {
        print_json(&report);
    } else {
        print!("{}", report.render_text());
    }
    Ok(ExitCode::SUCCESS)
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use attestrep::attestation::{AttestationProvider, ProviderConfig};
use attestrep::bundle::{build_bundle, parse_bundle, serialize_bundle, BundleError};
use attestrep::bytes::{Digest32, PublicKeyBytes};
use attestrep::clock::{Clock, FixedClock, SystemClock};
use attestrep::package::{digest_package, load_manifest, pack_archive};
use attestrep::runner::{estimate_cost, CostRates, Limits, Runner};
use attestrep::verifier::{verify_bundle, RejectReason, Verdict};
use rust_decimal::Decimal;
use serde_json::json;

use crate::output::{print_json, print_pairs};
use crate::{CliError, CliResult, ExecArgs, ProviderArgs};

pub fn clock_for(now: Option<u64>) -> Arc<dyn Clock> {
    match now {
        Some(t) => Arc::new(FixedClock::new(t)),
        None => Arc::new(SystemClock),
    }
}

pub fn provider_for(args: &ProviderArgs, clock: Arc<dyn Clock>) -> Result<AttestationProvider, CliError> {
    let seed = match args.provider_seed {
        Some(seed) => seed.0.to_vec(),
        None => {
            eprintln!("warning: no provider seed given; using the all-zero development seed");
            vec![0u8; 32]
        }
    };
    Ok(AttestationProvider::init_with_clock(ProviderConfig::simulated(seed), clock)?)
}

fn runner_for(exec: &ExecArgs, clock: Arc<dyn Clock>) -> Runner {
    let work = exec
        .work_dir
        .clone()
        .unwrap_or_else(|| std::env::temp_dir().join("attestrep-work"));
    let mut runner = Runner::new(work).with_clock(clock);
    if let Some(seed) = exec.nonce_seed {
        runner = runner.with_nonce_seed(seed);
    }
    runner
}

fn limits(exec: &ExecArgs) -> Limits {
    Limits {
        max_seconds: exec.max_seconds,
        max_output_bytes: exec.max_output_bytes,
    }
}

pub fn pack(dir: &Path, output: &Path, json: bool) -> CliResult {
    load_manifest(dir)?;
    let digest = digest_package(dir)?;
    let archive = pack_archive(dir)?;
    fs::write(output, &archive)?;
    if json {
        print_json(&json!({"archive": output, "bytes": archive.len(), "package_digest": digest}));
    } else {
        print_pairs(&[
            ("archive", output.display().to_string()),
            ("bytes", archive.len().to_string()),
            ("files", digest.file_count.to_string()),
            ("package_digest", digest.hex()),
        ]);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn digest(dir: &Path, json: bool) -> CliResult {
    let digest = digest_package(dir)?;
    if json {
        print_json(&digest);
    } else {
        println!("{}  {} files, {} bytes", digest.hex(), digest.file_count, digest.total_bytes);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn run(dir: &Path, exec: &ExecArgs, hourly_rate: Option<Decimal>, json: bool) -> CliResult {
    let manifest = load_manifest(dir)?;
    let record = runner_for(exec, clock_for(exec.now)).execute(dir, &manifest, limits(exec))?;
    let mut rates = CostRates::default();
    if let Some(rate) = hourly_rate {
        if rate <= Decimal::ZERO {
            return Err(CliError::Usage("--hourly-rate must be positive".into()));
        }
        rates.hourly_rate_usd = rate;
    }
    let cost = estimate_cost(&record, &rates);
    if json {
        print_json(&json!({"record": record, "cost": cost, "job_dir": record.job_dir}));
    } else {
        print_pairs(&[
            ("exit_status", record.exit_status.to_string()),
            ("wall_seconds", format!("{:.3}", record.wall_seconds)),
            ("package_digest", record.package_digest.hex()),
            ("output_digest", record.output_digest.hex()),
            ("output_files", record.output_digest.file_count.to_string()),
            ("nonce", record.nonce.to_hex()),
            ("compute_cost_usd", cost.compute_cost_usd.to_string()),
            ("storage_cost_usd", cost.storage_cost_usd.to_string()),
            ("job_dir", record.job_dir.display().to_string()),
        ]);
    }
    Ok(if record.succeeded() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

pub fn attest(dir: &Path, output: &PathBuf, exec: &ExecArgs, provider: &ProviderArgs, json: bool) -> CliResult {
    let manifest = load_manifest(dir)?;
    let clock = clock_for(exec.now);
    let provider = provider_for(provider, clock.clone())?;
    let record = runner_for(exec, clock).execute(dir, &manifest, limits(exec))?;
    let bundle = match build_bundle(&record, &provider) {
        Ok(b) => b,
        Err(BundleError::NonZeroExit(code)) => {
            return Err(CliError::Failure(format!(
                "entrypoint exited with status {code}; no proof issued (logs in {})",
                record.job_dir.display()
            )))
        }
        Err(e) => return Err(e.into()),
    };
    fs::write(output, serialize_bundle(&bundle))?;
    if json {
        print_json(&json!({
            "bundle": output,
            "bundle_id": bundle.bundle_id,
            "package_digest": bundle.package_digest.value,
            "output_digest": bundle.output_digest.value,
            "root_public_key": provider.root_public_key(),
        }));
    } else {
        print_pairs(&[
            ("bundle", output.display().to_string()),
            ("bundle_id", bundle.token()),
            ("package_digest", bundle.package_digest.hex()),
            ("output_digest", bundle.output_digest.hex()),
            ("root_public_key", provider.root_public_key().to_hex()),
        ]);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn verify(
    bundle: &Path,
    roots: &[PublicKeyBytes],
    archive_digest: Option<Digest32>,
    now: Option<u64>,
    json: bool,
) -> CliResult {
    let bytes = fs::read(bundle)?;
    let now = now.unwrap_or_else(|| SystemClock.now());
    let mut verdict = verify_bundle(&bytes, roots, now);
    if let (true, Some(expected)) = (verdict.is_accept(), archive_digest) {
        let parsed = parse_bundle(&bytes).expect("accepted bundles parse");
        if parsed.package_digest.value != expected {
            verdict = Verdict::reject(RejectReason::DigestMismatch);
        }
    }
    if json {
        print_json(&verdict);
    } else {
        println!("{verdict}");
    }
    Ok(if verdict.is_accept() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

pub fn provider_show(args: &ProviderArgs, json: bool) -> CliResult {
    let provider = provider_for(args, Arc::new(SystemClock))?;
    if json {
        print_json(&json!({
            "provider_id": provider.provider_id(),
            "root_public_key": provider.root_public_key(),
            "signing_key_id": provider.signing_key_id(),
        }));
    } else {
        print_pairs(&[
            ("provider_id", provider.provider_id().to_string()),
            ("root_public_key", provider.root_public_key().to_hex()),
            ("signing_key_id", provider.signing_key_id().to_hex()),
        ]);
    }
    Ok(ExitCode::SUCCESS)
}

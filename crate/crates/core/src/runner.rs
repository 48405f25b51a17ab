//! Author-side execution of a replication package.
//!
//! Each job gets its own directory under the runner's work dir:
//!
//! ```text
//! <work_dir>/job-<id>/
//!     sandbox/           fresh copy of the package; cwd of the entrypoint
//!     outputs/           files matched by the manifest's declared outputs
//!     build.log
//!     run.stdout.log
//!     run.stderr.log
//! ```
//!
//! The entrypoint runs with a cleared environment (only `PATH`, `HOME` and
//! `LANG` are passed through) in its own process group so that time and output
//! limits can kill the whole tree. Output digests cover `outputs/` only; logs
//! are digested separately.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use globset::{Glob, GlobSet, GlobSetBuilder};
use parking_lot::Mutex;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rust_decimal::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::bytes::{Digest32, HexBytes};
use crate::clock::{Clock, SystemClock};
use crate::package::{
    collect_files, digest_files, digest_package, hash_file, DigestError, PackageDigest,
    PackageManifest,
};

pub const BUILD_LOG: &str = "build.log";
pub const STDOUT_LOG: &str = "run.stdout.log";
pub const STDERR_LOG: &str = "run.stderr.log";

const ENV_ALLOWLIST: &[&str] = &["PATH", "HOME", "LANG"];
const FALLBACK_PATH: &str = "/usr/local/bin:/usr/bin:/bin";
const POLL_INTERVAL: Duration = Duration::from_millis(5);

/// Hourly rate that maps the pilot's mean runtime (2.3 h) to its mean
/// per-package cost ($1.57): 1.57 / 2.3, rounded to 4 places.
pub const DEFAULT_HOURLY_RATE_USD: Decimal = Decimal::from_parts(6826, 0, 0, false, 4);
/// Storage price per GiB archived.
pub const DEFAULT_STORAGE_RATE_USD_PER_GIB: Decimal = Decimal::from_parts(5, 0, 0, false, 2);

#[derive(Debug, Error)]
pub enum RunError {
    #[error("entrypoint {0:?} does not exist in the package")]
    EntrypointMissing(String),
    #[error("time limit of {0} s exceeded")]
    TimeLimitExceeded(u64),
    #[error("output limit of {limit} bytes exceeded")]
    OutputLimitExceeded { limit: u64 },
    #[error("no files matched the declared outputs")]
    NoDeclaredOutputsMatched,
    #[error("invalid output pattern {pattern:?}: {reason}")]
    BadOutputPattern { pattern: String, reason: String },
    #[error(transparent)]
    Digest(#[from] DigestError),
    #[error("job I/O: {0}")]
    Io(#[from] io::Error),
}

impl RunError {
    /// Short stable name used in submission failure reasons.
    pub fn kind(&self) -> String {
        match self {
            RunError::EntrypointMissing(_) => "EntrypointMissing".into(),
            RunError::TimeLimitExceeded(s) => format!("TimeLimitExceeded({s})"),
            RunError::OutputLimitExceeded { .. } => "OutputLimitExceeded".into(),
            RunError::NoDeclaredOutputsMatched => "NoDeclaredOutputsMatched".into(),
            RunError::BadOutputPattern { .. } => "BadOutputPattern".into(),
            RunError::Digest(_) => "DigestError".into(),
            RunError::Io(_) => "IoError".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub max_seconds: u64,
    pub max_output_bytes: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_seconds: 6 * 3600,
            max_output_bytes: 1 << 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub package_digest: PackageDigest,
    pub output_digest: PackageDigest,
    pub exit_status: i32,
    pub wall_seconds: f64,
    pub stdout_log_digest: Digest32,
    pub stderr_log_digest: Digest32,
    pub started_at: u64,
    pub finished_at: u64,
    pub nonce: Digest32,
    /// Where the sandbox, outputs and logs of this job live.
    #[serde(skip)]
    pub job_dir: PathBuf,
}

impl ExecutionRecord {
    pub fn succeeded(&self) -> bool {
        self.exit_status == 0
    }
}

enum NonceSource {
    Os,
    Seeded(Box<Mutex<ChaCha20Rng>>),
}

impl NonceSource {
    fn next(&self) -> [u8; 32] {
        let mut nonce = [0u8; 32];
        match self {
            NonceSource::Os => rand::rng().fill_bytes(&mut nonce),
            NonceSource::Seeded(rng) => rng.lock().fill_bytes(&mut nonce),
        }
        nonce
    }
}

pub struct Runner {
    work_dir: PathBuf,
    clock: Arc<dyn Clock>,
    nonces: NonceSource,
}

impl std::fmt::Debug for Runner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runner")
            .field("work_dir", &self.work_dir)
            .finish_non_exhaustive()
    }
}

impl Runner {
    pub fn new(work_dir: impl Into<PathBuf>) -> Self {
        Self {
            work_dir: work_dir.into(),
            clock: Arc::new(SystemClock),
            nonces: NonceSource::Os,
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Deterministic nonce stream, for reproducible test fixtures only.
    pub fn with_nonce_seed(mut self, seed: u64) -> Self {
        self.nonces = NonceSource::Seeded(Box::new(Mutex::new(ChaCha20Rng::seed_from_u64(seed))));
        self
    }

    pub fn work_dir(&self) -> &Path {
        &self.work_dir
    }

    pub fn execute(
        &self,
        root: &Path,
        manifest: &PackageManifest,
        limits: Limits,
    ) -> Result<ExecutionRecord, RunError> {
        manifest
            .validate()
            .map_err(|_| RunError::EntrypointMissing(manifest.entrypoint.clone()))?;
        let outputs_matcher = OutputMatcher::new(&manifest.declared_outputs)?;

        let nonce = HexBytes(self.nonces.next());
        let package_files = collect_files(root)?;
        if !package_files
            .iter()
            .any(|f| f.rel_path == manifest.entrypoint)
        {
            return Err(RunError::EntrypointMissing(manifest.entrypoint.clone()));
        }
        let package_digest = digest_files(&package_files)?;

        fs::create_dir_all(&self.work_dir)?;
        let job_dir = tempfile::Builder::new()
            .prefix(&format!("job-{}-", &nonce.to_hex()[..12]))
            .tempdir_in(&self.work_dir)?
            .keep();
        let sandbox = job_dir.join("sandbox");
        let outputs = job_dir.join("outputs");
        fs::create_dir_all(&sandbox)?;
        fs::create_dir_all(&outputs)?;

        let copied = copy_tree(root, &sandbox)?;
        let entrypoint = sandbox.join(&manifest.entrypoint);
        let (program, args) = interpreter_for(&entrypoint)?;

        let mut build_log = String::new();
        let _ = writeln!(build_log, "job {}", job_dir.display());
        let _ = writeln!(build_log, "package digest {}", package_digest.hex());
        let _ = writeln!(build_log, "copied {copied} files into sandbox");
        for env in &manifest.env_spec {
            let _ = writeln!(build_log, "requires {env}");
        }
        let _ = writeln!(build_log, "command {program} {}", args.join(" "));
        fs::write(job_dir.join(BUILD_LOG), build_log)?;

        let stdout_path = job_dir.join(STDOUT_LOG);
        let stderr_path = job_dir.join(STDERR_LOG);
        let mut cmd = Command::new(&program);
        cmd.args(&args)
            .current_dir(&sandbox)
            .stdin(Stdio::null())
            .stdout(File::create(&stdout_path)?)
            .stderr(File::create(&stderr_path)?)
            .env_clear();
        for key in ENV_ALLOWLIST {
            if let Ok(value) = std::env::var(key) {
                cmd.env(key, value);
            }
        }
        if std::env::var_os("PATH").is_none() {
            cmd.env("PATH", FALLBACK_PATH);
        }
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }

        let started_at = self.clock.now();
        let start = Instant::now();
        let mut child = cmd.spawn()?;
        let timeout = Duration::from_secs(limits.max_seconds);
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if start.elapsed() > timeout {
                kill_tree(&mut child);
                return Err(RunError::TimeLimitExceeded(limits.max_seconds));
            }
            let logged = file_len(&stdout_path) + file_len(&stderr_path);
            if logged > limits.max_output_bytes {
                kill_tree(&mut child);
                return Err(RunError::OutputLimitExceeded {
                    limit: limits.max_output_bytes,
                });
            }
            thread::sleep(POLL_INTERVAL);
        };
        let finished_at = self.clock.now().max(started_at);
        let wall_seconds = if self.clock.is_real_time() {
            start.elapsed().as_secs_f64()
        } else {
            (finished_at - started_at) as f64
        };
        let exit_status = exit_code(status);

        let logged = file_len(&stdout_path) + file_len(&stderr_path);
        if logged > limits.max_output_bytes {
            return Err(RunError::OutputLimitExceeded {
                limit: limits.max_output_bytes,
            });
        }

        let matched = collect_outputs(&sandbox, &outputs, &outputs_matcher)?;
        if exit_status == 0 && matched == 0 {
            return Err(RunError::NoDeclaredOutputsMatched);
        }
        let output_digest = digest_package(&outputs)?;
        if output_digest.total_bytes > limits.max_output_bytes {
            return Err(RunError::OutputLimitExceeded {
                limit: limits.max_output_bytes,
            });
        }

        Ok(ExecutionRecord {
            package_digest,
            output_digest,
            exit_status,
            wall_seconds,
            stdout_log_digest: hash_file(&stdout_path)?.0,
            stderr_log_digest: hash_file(&stderr_path)?.0,
            started_at,
            finished_at,
            nonce,
            job_dir,
        })
    }
}

fn file_len(path: &Path) -> u64 {
    fs::metadata(path).map(|m| m.len()).unwrap_or(0)
}

#[cfg(unix)]
fn exit_code(status: ExitStatus) -> i32 {
    use std::os::unix::process::ExitStatusExt;
    status
        .code()
        .or_else(|| status.signal().map(|s| 128 + s))
        .unwrap_or(-1)
}

#[cfg(not(unix))]
fn exit_code(status: ExitStatus) -> i32 {
    status.code().unwrap_or(-1)
}

fn kill_tree(child: &mut std::process::Child) {
    #[cfg(unix)]
    {
        let pgid = child.id() as libc::pid_t;
        // SAFETY: signalling a process group we created; no memory is touched.
        unsafe {
            libc::kill(-pgid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
    let _ = child.wait();
}

/// Chooses how to launch the entrypoint from its extension or shebang.
fn interpreter_for(entrypoint: &Path) -> Result<(String, Vec<String>), RunError> {
    let path = entrypoint.to_string_lossy().into_owned();
    let ext = entrypoint
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default();
    let interp = match ext {
        "sh" => Some("sh"),
        "bash" => Some("bash"),
        "py" => Some("python3"),
        "R" | "r" => Some("Rscript"),
        _ => None,
    };
    if let Some(interp) = interp {
        return Ok((interp.to_string(), vec![path]));
    }
    // Anything else is executed directly and must carry a shebang or be a binary.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mut perms = fs::metadata(entrypoint)?.permissions();
        perms.set_mode(perms.mode() | 0o700);
        fs::set_permissions(entrypoint, perms)?;
    }
    Ok((path, Vec::new()))
}

fn copy_tree(src: &Path, dst: &Path) -> Result<usize, RunError> {
    let mut copied = 0;
    for entry in WalkDir::new(src).follow_links(false).min_depth(1) {
        let entry = entry.map_err(|e| io::Error::other(e.to_string()))?;
        let rel = entry.path().strip_prefix(src).expect("walk stays under root");
        let target = dst.join(rel);
        let ft = entry.file_type();
        if ft.is_dir() {
            fs::create_dir_all(&target)?;
        } else if ft.is_file() {
            fs::copy(entry.path(), &target)?;
            copied += 1;
        } else {
            return Err(DigestError::SymlinkEncountered(rel.display().to_string()).into());
        }
    }
    Ok(copied)
}

/// Declared outputs: entries ending in `/` select a whole directory, anything
/// else is a glob (a literal path is a glob that matches itself).
struct OutputMatcher {
    dirs: Vec<String>,
    globs: GlobSet,
}

impl OutputMatcher {
    fn new(patterns: &[String]) -> Result<Self, RunError> {
        let mut dirs = Vec::new();
        let mut builder = GlobSetBuilder::new();
        for pattern in patterns {
            if pattern.ends_with('/') {
                dirs.push(pattern.clone());
            } else {
                let glob = Glob::new(pattern).map_err(|e| RunError::BadOutputPattern {
                    pattern: pattern.clone(),
                    reason: e.to_string(),
                })?;
                builder.add(glob);
            }
        }
        let globs = builder.build().map_err(|e| RunError::BadOutputPattern {
            pattern: patterns.join(","),
            reason: e.to_string(),
        })?;
        Ok(Self { dirs, globs })
    }

    fn is_match(&self, rel: &str) -> bool {
        self.dirs.iter().any(|d| rel.starts_with(d.as_str())) || self.globs.is_match(rel)
    }
}

fn collect_outputs(sandbox: &Path, outputs: &Path, matcher: &OutputMatcher) -> Result<usize, RunError> {
    let mut matched = 0;
    for file in collect_files(sandbox)? {
        if matcher.is_match(&file.rel_path) {
            let target = outputs.join(&file.rel_path);
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::copy(&file.abs_path, target)?;
            matched += 1;
        }
    }
    Ok(matched)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRates {
    #[serde(with = "rust_decimal::serde::float")]
    pub hourly_rate_usd: Decimal,
    #[serde(with = "rust_decimal::serde::float")]
    pub storage_usd_per_gib: Decimal,
}

impl Default for CostRates {
    fn default() -> Self {
        Self {
            hourly_rate_usd: DEFAULT_HOURLY_RATE_USD,
            storage_usd_per_gib: DEFAULT_STORAGE_RATE_USD_PER_GIB,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostEstimate {
    #[serde(with = "rust_decimal::serde::float")]
    pub hourly_rate_usd: Decimal,
    #[serde(with = "rust_decimal::serde::float")]
    pub compute_cost_usd: Decimal,
    #[serde(with = "rust_decimal::serde::float")]
    pub storage_cost_usd: Decimal,
}

impl CostEstimate {
    pub fn total_usd(&self) -> Decimal {
        self.compute_cost_usd + self.storage_cost_usd
    }
}

pub(crate) fn round4(value: Decimal) -> Decimal {
    value.round_dp_with_strategy(4, RoundingStrategy::MidpointAwayFromZero)
}

const GIB: Decimal = Decimal::from_parts(1 << 30, 0, 0, false, 0);

/// Compute cost is `rate * seconds / 3600`; storage is billed on the bytes of
/// the package plus its outputs. Both rounded half-up to 4 places.
pub fn estimate_cost(record: &ExecutionRecord, rates: &CostRates) -> CostEstimate {
    cost_for(
        record.wall_seconds,
        record.package_digest.total_bytes + record.output_digest.total_bytes,
        rates,
    )
}

pub fn cost_for(wall_seconds: f64, stored_bytes: u64, rates: &CostRates) -> CostEstimate {
    let seconds = Decimal::from_f64(wall_seconds.max(0.0)).unwrap_or(Decimal::ZERO);
    let compute = round4(rates.hourly_rate_usd * seconds / Decimal::from(3600));
    let storage = round4(rates.storage_usd_per_gib * Decimal::from(stored_bytes) / GIB);
    CostEstimate {
        hourly_rate_usd: rates.hourly_rate_usd,
        compute_cost_usd: compute,
        storage_cost_usd: storage,
    }
}

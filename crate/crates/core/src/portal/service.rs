use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::audit::{AuditEntry, AuditError, AuditEvent, AuditLog, AuditStatus};
use super::store::{write_atomic, BlobStore, StoreError};
use crate::attestation::AttestationProvider;
use crate::bundle::{build_bundle, parse_bundle, serialize_bundle, BundleError};
use crate::bytes::{sha256, Digest32, PublicKeyBytes};
use crate::clock::Clock;
use crate::package::{digest_package, load_manifest, unpack_archive, ArchiveError, ManifestError, PackageDigest};
use crate::runner::{Limits, RunError, Runner};
use crate::verifier::{verify_against_archive, verify_bundle, RejectReason, Verdict};

pub const DEFAULT_DUPLICATE_WINDOW: u64 = 3600;
pub const AUDIT_FILE: &str = "audit.jsonl";

#[derive(Debug, Error)]
pub enum PortalError {
    #[error("archive is malformed: {0}")]
    ArchiveMalformed(String),
    #[error("archive has no manifest")]
    ManifestMissing,
    #[error("manifest is invalid: {0}")]
    ManifestInvalid(String),
    #[error("duplicate of submission {existing}")]
    DuplicateSubmission { existing: Digest32 },
    #[error("unknown submission {0}")]
    UnknownSubmission(Digest32),
    #[error("submission is in state {0}")]
    WrongState(SubmissionState),
    #[error("unknown token")]
    UnknownToken,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("portal I/O: {0}")]
    Io(#[from] io::Error),
}

impl PortalError {
    pub fn kind(&self) -> &'static str {
        match self {
            PortalError::ArchiveMalformed(_) => "ArchiveMalformed",
            PortalError::ManifestMissing => "ManifestMissing",
            PortalError::ManifestInvalid(_) => "ManifestInvalid",
            PortalError::DuplicateSubmission { .. } => "DuplicateSubmission",
            PortalError::UnknownSubmission(_) => "UnknownSubmission",
            PortalError::WrongState(_) => "WrongState",
            PortalError::UnknownToken => "UnknownToken",
            PortalError::Store(_) => "StoreError",
            PortalError::Audit(_) => "AuditError",
            PortalError::Io(_) => "IoError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "reason")]
pub enum SubmissionState {
    Received,
    Running,
    Proved,
    Failed(String),
}

impl SubmissionState {
    pub fn name(&self) -> &'static str {
        match self {
            SubmissionState::Received => "Received",
            SubmissionState::Running => "Running",
            SubmissionState::Proved => "Proved",
            SubmissionState::Failed(_) => "Failed",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, SubmissionState::Proved | SubmissionState::Failed(_))
    }
}

impl fmt::Display for SubmissionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubmissionState::Failed(reason) => write!(f, "Failed({reason})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub submission_id: Digest32,
    pub author_id: String,
    pub received_at: u64,
    pub package_digest: PackageDigest,
    /// Blob key of the submitted archive.
    pub archive_blob: Digest32,
    pub state: SubmissionState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle_blob: Option<Digest32>,
}

pub fn submission_id(package_digest: &Digest32, received_at: u64, author_id: &str) -> Digest32 {
    sha256(&[
        package_digest.as_bytes(),
        &received_at.to_be_bytes(),
        author_id.as_bytes(),
    ])
}

#[derive(Debug, Clone)]
pub struct PortalConfig {
    pub store_dir: PathBuf,
    pub trust_roots: Vec<PublicKeyBytes>,
    pub limits: Limits,
    /// Resubmitting the same package as the same author within this many
    /// seconds is refused.
    pub duplicate_window: u64,
    pub nonce_seed: Option<u64>,
}

impl PortalConfig {
    pub fn new(store_dir: impl Into<PathBuf>, trust_roots: Vec<PublicKeyBytes>) -> Self {
        Self {
            store_dir: store_dir.into(),
            trust_roots,
            limits: Limits::default(),
            duplicate_window: DEFAULT_DUPLICATE_WINDOW,
            nonce_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PublicVerification {
    pub token: String,
    #[serde(flatten)]
    pub verdict: Verdict,
    pub package_digest: Digest32,
    #[serde(skip)]
    pub bundle: Vec<u8>,
}

#[derive(Default)]
struct Index {
    submissions: HashMap<Digest32, Submission>,
    tokens: HashMap<String, Digest32>,
}

/// Store layout under `store_dir`:
/// `blobs/` content-addressed archives and bundles, `submissions/<id>.json`,
/// `quarantine/<id>/` unpacked packages, `work/` job directories and
/// `audit.jsonl`.
pub struct Portal {
    config: PortalConfig,
    blobs: BlobStore,
    audit: AuditLog,
    provider: Arc<AttestationProvider>,
    runner: Runner,
    clock: Arc<dyn Clock>,
    index: RwLock<Index>,
}

impl fmt::Debug for Portal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Portal")
            .field("store_dir", &self.config.store_dir)
            .finish_non_exhaustive()
    }
}

impl Portal {
    /// Opens (or creates) a store. Submissions found mid-run are rolled back
    /// to `Received`: only terminal states are ever written as such.
    pub fn open(
        config: PortalConfig,
        provider: Arc<AttestationProvider>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, PortalError> {
        let root = &config.store_dir;
        for sub in ["submissions", "quarantine", "work"] {
            fs::create_dir_all(root.join(sub))?;
        }
        let blobs = BlobStore::open(root.join("blobs"))?;
        let audit = AuditLog::open(root.join(AUDIT_FILE))?;
        let mut runner = Runner::new(root.join("work")).with_clock(clock.clone());
        if let Some(seed) = config.nonce_seed {
            runner = runner.with_nonce_seed(seed);
        }

        let mut index = Index::default();
        for entry in fs::read_dir(root.join("submissions"))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let mut sub: Submission = serde_json::from_slice(&fs::read(&path)?)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            if sub.state == SubmissionState::Running {
                sub.state = SubmissionState::Received;
            }
            if let Some(token) = &sub.token {
                index.tokens.insert(token.clone(), sub.submission_id);
            }
            index.submissions.insert(sub.submission_id, sub);
        }

        Ok(Self {
            config,
            blobs,
            audit,
            provider,
            runner,
            clock,
            index: RwLock::new(index),
        })
    }

    pub fn config(&self) -> &PortalConfig {
        &self.config
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    pub fn audit_log(&self) -> &AuditLog {
        &self.audit
    }

    pub fn trust_roots(&self) -> &[PublicKeyBytes] {
        &self.config.trust_roots
    }

    fn record_path(&self, id: &Digest32) -> PathBuf {
        self.config
            .store_dir
            .join("submissions")
            .join(format!("{}.json", id.to_hex()))
    }

    fn quarantine_dir(&self, id: &Digest32) -> PathBuf {
        self.config.store_dir.join("quarantine").join(id.to_hex())
    }

    fn persist(&self, sub: &Submission) -> io::Result<()> {
        let bytes = serde_json::to_vec_pretty(sub).expect("submissions serialize");
        write_atomic(
            &self.config.store_dir.join("submissions"),
            &self.record_path(&sub.submission_id),
            &bytes,
        )
    }

    fn transition(&self, sub: &Submission, from: Option<&SubmissionState>) -> Result<AuditEntry, AuditError> {
        self.audit.append(&AuditEvent::Submission {
            submission_id: sub.submission_id,
            author_id: sub.author_id.clone(),
            from: from.map(|s| s.to_string()),
            to: sub.state.to_string(),
            at: self.clock.now(),
        })
    }

    pub fn submit(&self, archive: &[u8], author_id: &str) -> Result<Submission, PortalError> {
        let received_at = self.clock.now();
        let staging = tempfile::Builder::new()
            .prefix("incoming-")
            .tempdir_in(self.config.store_dir.join("quarantine"))?;
        unpack_archive(archive, staging.path()).map_err(|e| match e {
            ArchiveError::Io(e) => PortalError::Io(e),
            other => PortalError::ArchiveMalformed(other.to_string()),
        })?;
        load_manifest(staging.path()).map_err(|e| match e {
            ManifestError::ManifestMissing(_) => PortalError::ManifestMissing,
            ManifestError::Io(e) => PortalError::Io(e),
            other => PortalError::ManifestInvalid(other.to_string()),
        })?;
        let package_digest =
            digest_package(staging.path()).map_err(|e| PortalError::ArchiveMalformed(e.to_string()))?;
        let id = submission_id(&package_digest.value, received_at, author_id);

        let mut index = self.index.write();
        let window = self.config.duplicate_window;
        if let Some(existing) = index.submissions.values().find(|s| {
            s.submission_id == id
                || (s.author_id == author_id
                    && s.package_digest.value == package_digest.value
                    && received_at.abs_diff(s.received_at) < window)
        }) {
            return Err(PortalError::DuplicateSubmission {
                existing: existing.submission_id,
            });
        }

        let archive_blob = self.blobs.put(archive)?;
        let quarantine = self.quarantine_dir(&id);
        if quarantine.exists() {
            fs::remove_dir_all(&quarantine)?;
        }
        fs::rename(staging.keep(), &quarantine)?;

        let sub = Submission {
            submission_id: id,
            author_id: author_id.to_string(),
            received_at,
            package_digest,
            archive_blob,
            state: SubmissionState::Received,
            token: None,
            bundle_blob: None,
        };
        self.persist(&sub)?;
        self.transition(&sub, None)?;
        index.submissions.insert(id, sub.clone());
        tracing::info!(submission = %id, author = author_id, "submission received");
        Ok(sub)
    }

    pub fn get(&self, id: &Digest32) -> Option<Submission> {
        self.index.read().submissions.get(id).cloned()
    }

    pub fn list(&self) -> Vec<Submission> {
        let mut subs: Vec<_> = self.index.read().submissions.values().cloned().collect();
        subs.sort_by_key(|s| (s.received_at, s.submission_id.0));
        subs
    }

    pub fn submission_for_token(&self, token: &str) -> Option<Submission> {
        let index = self.index.read();
        let id = index.tokens.get(token)?;
        index.submissions.get(id).cloned()
    }

    /// Runs the package and attests the run. Only one caller can move a
    /// submission out of `Received`; everyone else sees `WrongState`.
    pub fn process(&self, id: &Digest32) -> Result<Submission, PortalError> {
        let received = {
            let mut index = self.index.write();
            let sub = index
                .submissions
                .get_mut(id)
                .ok_or(PortalError::UnknownSubmission(*id))?;
            if sub.state != SubmissionState::Received {
                return Err(PortalError::WrongState(sub.state.clone()));
            }
            sub.state = SubmissionState::Running;
            sub.clone()
        };
        self.transition(&received, Some(&SubmissionState::Received))?;

        let outcome = self.run_and_attest(&received);
        let mut done = received.clone();
        match outcome {
            Ok((token, bundle_blob)) => {
                done.state = SubmissionState::Proved;
                done.token = Some(token);
                done.bundle_blob = Some(bundle_blob);
            }
            Err(reason) => done.state = SubmissionState::Failed(reason),
        }

        let committed = self.persist(&done);
        let mut index = self.index.write();
        if let Err(e) = committed {
            // nothing durable changed; let a later call retry
            if let Some(s) = index.submissions.get_mut(id) {
                s.state = SubmissionState::Received;
            }
            return Err(e.into());
        }
        if let (Some(token), Some(bundle_blob)) = (&done.token, done.bundle_blob) {
            index.tokens.insert(token.clone(), done.submission_id);
            self.audit.append(&AuditEvent::ProofArchived {
                submission_id: done.submission_id,
                token: token.clone(),
                package_digest: done.package_digest.value,
                bundle_blob,
                at: self.clock.now(),
            })?;
        }
        index.submissions.insert(*id, done.clone());
        drop(index);
        self.transition(&done, Some(&SubmissionState::Running))?;
        tracing::info!(submission = %id, state = %done.state, "submission processed");
        Ok(done)
    }

    /// Returns `(token, bundle blob key)` or a failure reason.
    fn run_and_attest(&self, sub: &Submission) -> Result<(String, Digest32), String> {
        let dir = self.ensure_quarantine(sub).map_err(|e| format!("IoError: {e}"))?;
        let manifest = load_manifest(&dir).map_err(|e| format!("ManifestInvalid: {e}"))?;
        let record = self
            .runner
            .execute(&dir, &manifest, self.config.limits)
            .map_err(|e: RunError| e.kind())?;
        let _ = fs::remove_dir_all(&record.job_dir);
        if record.package_digest != sub.package_digest {
            return Err("DigestMismatch".into());
        }
        let bundle = build_bundle(&record, &self.provider).map_err(|e| match e {
            BundleError::NonZeroExit(code) => format!("NonZeroExit({code})"),
            BundleError::Attestation(e) => format!("AttestationError: {e}"),
        })?;
        let bytes = serialize_bundle(&bundle);
        let key = self.blobs.put(&bytes).map_err(|e| format!("IoError: {e}"))?;
        Ok((bundle.token(), key))
    }

    /// The unpacked package, restored from the archive blob if a previous
    /// run was interrupted after removing it.
    fn ensure_quarantine(&self, sub: &Submission) -> Result<PathBuf, PortalError> {
        let dir = self.quarantine_dir(&sub.submission_id);
        if dir.is_dir() {
            return Ok(dir);
        }
        let archive = self.blobs.get(&sub.archive_blob)?;
        let staging = tempfile::Builder::new()
            .prefix("restore-")
            .tempdir_in(self.config.store_dir.join("quarantine"))?;
        unpack_archive(&archive, staging.path()).map_err(|e| PortalError::ArchiveMalformed(e.to_string()))?;
        fs::rename(staging.keep(), &dir)?;
        Ok(dir)
    }

    /// Serves the archived bundle and re-verifies it against the trusted
    /// roots and the archived package.
    pub fn public_verify(&self, token: &str) -> Result<PublicVerification, PortalError> {
        let sub = self.submission_for_token(token).ok_or(PortalError::UnknownToken)?;
        let bundle_blob = sub.bundle_blob.ok_or(PortalError::UnknownToken)?;
        let bundle = match self.blobs.get_unchecked(&bundle_blob) {
            Ok(bytes) => bytes,
            Err(StoreError::NotFound(_)) => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let now = self.clock.now();
        let mut verdict = verify_bundle(&bundle, &self.config.trust_roots, now);
        if verdict.is_accept() {
            verdict = self.check_archive(&sub, &bundle);
        }
        self.audit.append(&AuditEvent::VerificationServed {
            token: token.to_string(),
            verdict: verdict_label(&verdict),
            at: now,
        })?;
        Ok(PublicVerification {
            token: token.to_string(),
            verdict,
            package_digest: sub.package_digest.value,
            bundle,
        })
    }

    fn check_archive(&self, sub: &Submission, bundle: &[u8]) -> Verdict {
        let mismatch = Verdict::reject(RejectReason::DigestMismatch);
        let Ok(parsed) = parse_bundle(bundle) else {
            return mismatch;
        };
        if parsed.token() != sub.token.clone().unwrap_or_default() {
            return mismatch;
        }
        let Ok(archived) = self.archived_digest(&sub.archive_blob) else {
            return mismatch;
        };
        if archived != sub.package_digest {
            return mismatch;
        }
        verify_against_archive(&parsed, &archived)
    }

    fn archived_digest(&self, archive_blob: &Digest32) -> Result<PackageDigest, PortalError> {
        let archive = self.blobs.get(archive_blob)?;
        let scratch = tempfile::tempdir_in(self.config.store_dir.join("work"))?;
        unpack_archive(&archive, scratch.path()).map_err(|e| PortalError::ArchiveMalformed(e.to_string()))?;
        digest_package(scratch.path()).map_err(|e| PortalError::ArchiveMalformed(e.to_string()))
    }

    /// Verifies bundle bytes supplied by a reader. If the bundle's token is
    /// known, the archived package is checked as well.
    pub fn verify_uploaded(&self, bundle: &[u8]) -> Result<Verdict, PortalError> {
        let now = self.clock.now();
        let mut verdict = verify_bundle(bundle, &self.config.trust_roots, now);
        let token = parse_bundle(bundle).map(|b| b.token()).unwrap_or_default();
        if verdict.is_accept() {
            if let Some(sub) = self.submission_for_token(&token) {
                verdict = self.check_archive(&sub, bundle);
            }
        }
        self.audit.append(&AuditEvent::VerificationServed {
            token,
            verdict: verdict_label(&verdict),
            at: now,
        })?;
        Ok(verdict)
    }

    pub fn bundle_bytes(&self, token: &str) -> Result<Vec<u8>, PortalError> {
        let sub = self.submission_for_token(token).ok_or(PortalError::UnknownToken)?;
        let key = sub.bundle_blob.ok_or(PortalError::UnknownToken)?;
        Ok(self.blobs.get(&key)?)
    }

    pub fn audit_entries(&self, from_seq: u64) -> Result<Vec<AuditEntry>, PortalError> {
        Ok(self.audit.entries(from_seq)?)
    }

    pub fn audit_check(&self) -> Result<AuditStatus, PortalError> {
        Ok(self.audit.check()?)
    }

    pub fn store_dir(&self) -> &Path {
        &self.config.store_dir
    }
}

fn verdict_label(verdict: &Verdict) -> String {
    match verdict.reason() {
        None => "accept".into(),
        Some(reason) => format!("reject:{}", reason.name()),
    }
}

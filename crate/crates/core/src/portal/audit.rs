//! Append-only hash-chained audit log stored as JSON lines.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bytes::{sha256, Digest32, HexBytes};
use crate::canonical::{to_canonical_vec, value_to_canonical_vec};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit log line {line} is unreadable: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("audit log I/O: {0}")]
    Io(#[from] io::Error),
}

/// What happened. Serialized canonically into [`AuditEntry::event`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AuditEvent {
    Submission {
        submission_id: Digest32,
        author_id: String,
        from: Option<String>,
        to: String,
        at: u64,
    },
    ProofArchived {
        submission_id: Digest32,
        token: String,
        package_digest: Digest32,
        bundle_blob: Digest32,
        at: u64,
    },
    VerificationServed {
        token: String,
        verdict: String,
        at: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditEntry {
    pub seq: u64,
    pub prev_hash: Digest32,
    pub event: Value,
    pub entry_hash: Digest32,
}

impl AuditEntry {
    pub fn compute_hash(prev_hash: &Digest32, event: &Value) -> Digest32 {
        sha256(&[prev_hash.as_bytes(), &value_to_canonical_vec(event)])
    }

    pub fn event(&self) -> Option<AuditEvent> {
        serde_json::from_value(self.event.clone()).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "seq", rename_all = "snake_case")]
pub enum AuditStatus {
    Ok,
    BrokenAt(u64),
}

/// Recomputes the chain and reports the first entry that does not fit.
pub fn audit_check(entries: &[AuditEntry]) -> AuditStatus {
    let mut prev = HexBytes::zero();
    for (i, entry) in entries.iter().enumerate() {
        let i = i as u64;
        if entry.seq != i
            || entry.prev_hash != prev
            || entry.entry_hash != AuditEntry::compute_hash(&entry.prev_hash, &entry.event)
        {
            return AuditStatus::BrokenAt(i);
        }
        prev = entry.entry_hash;
    }
    AuditStatus::Ok
}

/// Checks a log file line by line; an unparsable line breaks the chain there.
pub fn audit_check_file(path: &Path) -> io::Result<AuditStatus> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(AuditStatus::Ok),
        Err(e) => return Err(e),
    };
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        match serde_json::from_str::<AuditEntry>(&line?) {
            Ok(entry) => entries.push(entry),
            Err(_) => {
                return Ok(match audit_check(&entries) {
                    AuditStatus::Ok => AuditStatus::BrokenAt(i as u64),
                    broken => broken,
                })
            }
        }
    }
    Ok(audit_check(&entries))
}

pub fn read_entries(path: &Path) -> Result<Vec<AuditEntry>, AuditError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let entry = serde_json::from_str(&line?).map_err(|e| AuditError::Corrupt {
            line: i + 1,
            reason: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

struct Writer {
    file: File,
    next_seq: u64,
    last_hash: Digest32,
}

/// Single-writer handle. Appends are serialized by an internal lock, which
/// gives the chain its total order.
pub struct AuditLog {
    path: PathBuf,
    writer: Mutex<Writer>,
}

impl std::fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuditLog").field("path", &self.path).finish()
    }
}

impl AuditLog {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, AuditError> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let existing = read_entries(&path)?;
        let (next_seq, last_hash) = match existing.last() {
            Some(e) => (e.seq + 1, e.entry_hash),
            None => (0, HexBytes::zero()),
        };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            writer: Mutex::new(Writer {
                file,
                next_seq,
                last_hash,
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, event: &AuditEvent) -> Result<AuditEntry, AuditError> {
        let event = serde_json::to_value(event).expect("audit events serialize");
        self.append_value(event)
    }

    pub fn append_value(&self, event: Value) -> Result<AuditEntry, AuditError> {
        let mut w = self.writer.lock();
        let entry = AuditEntry {
            seq: w.next_seq,
            prev_hash: w.last_hash,
            entry_hash: AuditEntry::compute_hash(&w.last_hash, &event),
            event,
        };
        let mut line = to_canonical_vec(&entry).expect("audit entries serialize");
        line.push(b'\n');
        w.file.write_all(&line)?;
        w.file.flush()?;
        w.next_seq += 1;
        w.last_hash = entry.entry_hash;
        Ok(entry)
    }

    pub fn len(&self) -> u64 {
        self.writer.lock().next_seq
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self, from_seq: u64) -> Result<Vec<AuditEntry>, AuditError> {
        // hold the writer so a half-written line is never observed
        let _w = self.writer.lock();
        let mut all = read_entries(&self.path)?;
        all.retain(|e| e.seq >= from_seq);
        Ok(all)
    }

    pub fn check(&self) -> io::Result<AuditStatus> {
        let _w = self.writer.lock();
        audit_check_file(&self.path)
    }
}

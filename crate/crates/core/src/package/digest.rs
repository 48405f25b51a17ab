//! Canonical digest of a package file tree.
//!
//! ```text
//! leaf_i = SHA-256(0x00 || path_i || 0x00 || SHA-256(content_i))
//! value  = SHA-256(0x01 || leaf_1 || ... || leaf_n)
//! ```
//!
//! Paths are relative, `/`-separated UTF-8 and the leaves are ordered by the
//! byte order of their paths. Directories and permission bits do not
//! contribute.

use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;
use walkdir::WalkDir;

use crate::bytes::{sha256, Digest32, HexBytes};

const LEAF_PREFIX: u8 = 0x00;
const ROOT_PREFIX: u8 = 0x01;

#[derive(Debug, Error)]
pub enum DigestError {
    #[error("not a directory: {0}")]
    NotADirectory(PathBuf),
    #[error("symlink encountered at {0}")]
    SymlinkEncountered(String),
    #[error("unsupported file type at {0}")]
    UnsupportedFileType(String),
    #[error("path is not valid UTF-8: {0}")]
    NonUtf8Path(PathBuf),
    #[error("unreadable file {path}: {source}")]
    UnreadableFile {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackageDigest {
    pub value: Digest32,
    pub file_count: u64,
    pub total_bytes: u64,
}

impl PackageDigest {
    pub fn hex(&self) -> String {
        self.value.to_hex()
    }
}

/// One regular file as seen by the digest: its relative path and content hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileEntry {
    pub path: String,
    pub content_hash: Digest32,
    pub size: u64,
}

pub fn leaf_hash(path: &str, content_hash: &Digest32) -> Digest32 {
    sha256(&[
        &[LEAF_PREFIX],
        path.as_bytes(),
        &[LEAF_PREFIX],
        content_hash.as_bytes(),
    ])
}

/// Digest of an arbitrary collection of entries; enumeration order is irrelevant.
pub fn digest_entries<I>(entries: I) -> PackageDigest
where
    I: IntoIterator<Item = FileEntry>,
{
    let mut entries: Vec<FileEntry> = entries.into_iter().collect();
    entries.sort_unstable_by(|a, b| a.path.as_bytes().cmp(b.path.as_bytes()));

    let mut hasher = Sha256::new();
    hasher.update([ROOT_PREFIX]);
    let mut total_bytes = 0u64;
    for entry in &entries {
        hasher.update(leaf_hash(&entry.path, &entry.content_hash).as_bytes());
        total_bytes += entry.size;
    }
    PackageDigest {
        value: HexBytes(hasher.finalize().into()),
        file_count: entries.len() as u64,
        total_bytes,
    }
}

/// A regular file discovered under a package root.
#[derive(Debug, Clone)]
pub struct PackageFile {
    /// Relative `/`-separated path.
    pub rel_path: String,
    pub abs_path: PathBuf,
}

/// Enumerates all regular files beneath `root`, refusing symlinks and special files.
pub fn collect_files(root: &Path) -> Result<Vec<PackageFile>, DigestError> {
    let meta = std::fs::symlink_metadata(root)
        .map_err(|_| DigestError::NotADirectory(root.to_path_buf()))?;
    if !meta.is_dir() {
        return Err(DigestError::NotADirectory(root.to_path_buf()));
    }

    let mut files = Vec::new();
    for entry in WalkDir::new(root).follow_links(false).min_depth(1) {
        let entry = entry.map_err(|e| {
            let path = e
                .path()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| root.display().to_string());
            DigestError::UnreadableFile {
                path,
                source: e.into_io_error().unwrap_or_else(|| io::Error::other("walk error")),
            }
        })?;
        let rel_path = relative_path(root, entry.path())?;
        let file_type = entry.file_type();
        if file_type.is_symlink() {
            return Err(DigestError::SymlinkEncountered(rel_path));
        }
        if file_type.is_dir() {
            continue;
        }
        if !file_type.is_file() {
            return Err(DigestError::UnsupportedFileType(rel_path));
        }
        files.push(PackageFile {
            rel_path,
            abs_path: entry.into_path(),
        });
    }
    Ok(files)
}

pub(crate) fn relative_path(root: &Path, path: &Path) -> Result<String, DigestError> {
    let rel = path.strip_prefix(root).unwrap_or(path);
    let mut parts = Vec::new();
    for component in rel.components() {
        let part = component
            .as_os_str()
            .to_str()
            .ok_or_else(|| DigestError::NonUtf8Path(path.to_path_buf()))?;
        parts.push(part);
    }
    Ok(parts.join("/"))
}

/// Streams a file through SHA-256, returning the hash and byte count.
pub fn hash_file(path: &Path) -> io::Result<(Digest32, u64)> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((HexBytes(hasher.finalize().into()), total))
}

pub fn digest_files(files: &[PackageFile]) -> Result<PackageDigest, DigestError> {
    let mut entries = Vec::with_capacity(files.len());
    for file in files {
        let (content_hash, size) =
            hash_file(&file.abs_path).map_err(|source| DigestError::UnreadableFile {
                path: file.rel_path.clone(),
                source,
            })?;
        entries.push(FileEntry {
            path: file.rel_path.clone(),
            content_hash,
            size,
        });
    }
    Ok(digest_entries(entries))
}

/// Canonical digest of the regular files under `root`.
pub fn digest_package(root: &Path) -> Result<PackageDigest, DigestError> {
    digest_files(&collect_files(root)?)
}

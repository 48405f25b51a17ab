//! Flat content-addressed blob directory: `blobs/<sha256 hex>`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bytes::{sha256, Digest32};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("blob {0} not found")]
    NotFound(Digest32),
    #[error("blob {key} reads back as {actual}")]
    ContentMismatch { key: Digest32, actual: Digest32 },
    #[error("blob store I/O: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct BlobStore {
    dir: PathBuf,
}

impl BlobStore {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn path_of(&self, key: &Digest32) -> PathBuf {
        self.dir.join(key.to_hex())
    }

    /// Stores `bytes` under their SHA-256. Existing blobs are left untouched.
    pub fn put(&self, bytes: &[u8]) -> io::Result<Digest32> {
        let key = sha256(&[bytes]);
        let path = self.path_of(&key);
        if path.exists() {
            return Ok(key);
        }
        write_atomic(&self.dir, &path, bytes)?;
        Ok(key)
    }

    /// Reads a blob and checks that it still hashes to its key.
    pub fn get(&self, key: &Digest32) -> Result<Vec<u8>, StoreError> {
        let bytes = self.get_unchecked(key)?;
        let actual = sha256(&[&bytes]);
        if actual != *key {
            return Err(StoreError::ContentMismatch { key: *key, actual });
        }
        Ok(bytes)
    }

    pub fn get_unchecked(&self, key: &Digest32) -> Result<Vec<u8>, StoreError> {
        match fs::read(self.path_of(key)) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::NotFound(*key)),
            Err(e) => Err(e.into()),
        }
    }

    pub fn contains(&self, key: &Digest32) -> bool {
        self.path_of(key).is_file()
    }
}

/// Write-to-temp, fsync, rename. Readers see either the old file or the new one.
pub(crate) fn write_atomic(dir: &Path, dest: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dest).map_err(|e| e.error)?;
    Ok(())
}

//! ustar package archives used for portal submission.
//!
//! `pack_archive` is deterministic: entries sorted by path, zeroed mtimes and
//! owners, so the same tree always produces the same bytes.

use std::collections::HashSet;
use std::fs;
use std::io::{self, Read};
use std::path::Path;

use tar::{Builder, EntryType, Header};
use thiserror::Error;

use super::digest::{collect_files, DigestError};
use super::manifest::validate_rel_path;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("malformed archive: {0}")]
    Malformed(String),
    #[error(transparent)]
    Digest(#[from] DigestError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn pack_archive(root: &Path) -> Result<Vec<u8>, ArchiveError> {
    let mut files = collect_files(root)?;
    files.sort_by(|a, b| a.rel_path.as_bytes().cmp(b.rel_path.as_bytes()));

    let mut builder = Builder::new(Vec::new());
    for file in files {
        let data = fs::read(&file.abs_path)?;
        let mut header = Header::new_ustar();
        header.set_entry_type(EntryType::Regular);
        header.set_size(data.len() as u64);
        header.set_mode(file_mode(&file.abs_path));
        header.set_mtime(0);
        header.set_uid(0);
        header.set_gid(0);
        builder.append_data(&mut header, &file.rel_path, data.as_slice())?;
    }
    Ok(builder.into_inner()?)
}

#[cfg(unix)]
fn file_mode(path: &Path) -> u32 {
    use std::os::unix::fs::PermissionsExt;
    let executable = fs::metadata(path)
        .map(|m| m.permissions().mode() & 0o111 != 0)
        .unwrap_or(false);
    if executable {
        0o755
    } else {
        0o644
    }
}

#[cfg(not(unix))]
fn file_mode(_path: &Path) -> u32 {
    0o644
}

/// Unpacks into `dest` (which must exist), accepting only regular files and
/// directories whose paths pass the package path rules.
pub fn unpack_archive(bytes: &[u8], dest: &Path) -> Result<usize, ArchiveError> {
    let mut archive = tar::Archive::new(bytes);
    let mut seen = HashSet::new();
    let entries = archive
        .entries()
        .map_err(|e| ArchiveError::Malformed(e.to_string()))?;

    for entry in entries {
        let mut entry = entry.map_err(|e| ArchiveError::Malformed(e.to_string()))?;
        let raw_path = entry.path_bytes().into_owned();
        let path = String::from_utf8(raw_path)
            .map_err(|_| ArchiveError::Malformed("non-UTF-8 entry path".into()))?;

        match entry.header().entry_type() {
            EntryType::Regular | EntryType::Continuous => {
                validate_rel_path(&path, false)
                    .map_err(|e| ArchiveError::Malformed(format!("{path:?}: {e}")))?;
                if !seen.insert(path.clone()) {
                    return Err(ArchiveError::Malformed(format!("duplicate entry {path:?}")));
                }
                let target = dest.join(&path);
                if let Some(parent) = target.parent() {
                    fs::create_dir_all(parent)?;
                }
                let mut data = Vec::with_capacity(entry.size() as usize);
                entry
                    .read_to_end(&mut data)
                    .map_err(|e| ArchiveError::Malformed(format!("{path:?}: {e}")))?;
                fs::write(&target, data)?;
                #[cfg(unix)]
                {
                    use std::os::unix::fs::PermissionsExt;
                    let mode = entry.header().mode().unwrap_or(0o644) & 0o755;
                    fs::set_permissions(&target, fs::Permissions::from_mode(mode | 0o600))?;
                }
            }
            EntryType::Directory => {
                validate_rel_path(&path, true)
                    .map_err(|e| ArchiveError::Malformed(format!("{path:?}: {e}")))?;
                fs::create_dir_all(dest.join(path.trim_end_matches('/')))?;
            }
            other => {
                return Err(ArchiveError::Malformed(format!(
                    "unsupported entry type {other:?} at {path:?}"
                )))
            }
        }
    }
    Ok(seen.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::package::digest_package;

    fn tree() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("b/deep")).unwrap();
        fs::write(dir.path().join("a.txt"), "x").unwrap();
        fs::write(dir.path().join("b/deep/c.txt"), "y").unwrap();
        dir
    }

    #[test]
    fn pack_is_deterministic_and_round_trips_digest() {
        let src = tree();
        let first = pack_archive(src.path()).unwrap();
        let second = pack_archive(src.path()).unwrap();
        assert_eq!(first, second);

        let out = tempfile::tempdir().unwrap();
        assert_eq!(unpack_archive(&first, out.path()).unwrap(), 2);
        assert_eq!(
            digest_package(src.path()).unwrap(),
            digest_package(out.path()).unwrap()
        );
    }

    #[test]
    fn garbage_is_malformed() {
        let out = tempfile::tempdir().unwrap();
        let junk = vec![0x5au8; 1024];
        assert!(matches!(
            unpack_archive(&junk, out.path()),
            Err(ArchiveError::Malformed(_))
        ));
    }

    fn raw_archive(path: &str, entry_type: EntryType) -> Vec<u8> {
        let mut header = Header::new_ustar();
        header.set_entry_type(entry_type);
        header.set_size(1);
        header.set_mode(0o644);
        // bypass the builder's own path sanitising
        let name = &mut header.as_old_mut().name;
        name[..path.len()].copy_from_slice(path.as_bytes());
        header.set_cksum();
        let mut bytes = header.as_bytes().to_vec();
        let mut block = [0u8; 512];
        block[0] = b'z';
        bytes.extend_from_slice(&block);
        bytes.extend_from_slice(&[0u8; 1024]);
        bytes
    }

    #[test]
    fn traversal_paths_are_rejected() {
        let out = tempfile::tempdir().unwrap();
        for bad in ["../evil", "/etc/evil", "a/../../evil"] {
            let bytes = raw_archive(bad, EntryType::Regular);
            assert!(
                matches!(unpack_archive(&bytes, out.path()), Err(ArchiveError::Malformed(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn symlink_entries_are_rejected() {
        let out = tempfile::tempdir().unwrap();
        let bytes = raw_archive("link", EntryType::Symlink);
        assert!(matches!(
            unpack_archive(&bytes, out.path()),
            Err(ArchiveError::Malformed(_))
        ));
    }
}

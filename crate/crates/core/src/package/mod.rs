//! Replication packages: canonical digests, the manifest and the archive format.

mod archive;
mod digest;
mod manifest;

pub use archive::{pack_archive, unpack_archive, ArchiveError};
pub use digest::{
    collect_files, digest_entries, digest_files, digest_package, hash_file, leaf_hash,
    DigestError, FileEntry, PackageDigest, PackageFile,
};
pub use manifest::{
    load_manifest, validate_rel_path, EnvRequirement, ManifestError, PackageManifest,
    PathRuleError, MANIFEST_FILE,
};

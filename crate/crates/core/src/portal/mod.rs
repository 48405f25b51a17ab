//! Journal-side submission portal: accepts packages, runs and attests them,
//! archives the proof and serves verification to anyone holding a token.

mod audit;
pub mod http;
mod service;
mod store;

pub use audit::{
    audit_check, audit_check_file, read_entries, AuditEntry, AuditError, AuditEvent, AuditLog, AuditStatus,
};
pub use service::{
    submission_id, Portal, PortalConfig, PortalError, PublicVerification, Submission, SubmissionState,
    AUDIT_FILE, DEFAULT_DUPLICATE_WINDOW,
};
pub use store::{BlobStore, StoreError};

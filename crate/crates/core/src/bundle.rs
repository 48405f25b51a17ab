//! Publishable proof bundles (`.arproof`).
//!
//! A bundle binds the package digest, the output digest and the run's nonce to
//! a quote:
//!
//! ```text
//! measurement       = SHA-256("attestrep-image-v1" || package_digest)
//! report_data[..32] = SHA-256(package_digest || output_digest || nonce)
//! report_data[32..] = 0
//! bundle_id         = SHA-256(canonical JSON of every field except bundle_id)
//! ```
//!
//! The file contents are the canonical JSON of the whole bundle. Parsing is
//! strict: anything that does not re-serialize to the exact input bytes is
//! rejected.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::attestation::{AttestationError, AttestationProvider, AttestationQuote, EndorsementChain};
use crate::bytes::{sha256, Digest32, ReportData};
use crate::canonical::{first_difference, to_canonical_vec, value_to_canonical_vec};
use crate::package::PackageDigest;
use crate::runner::ExecutionRecord;

pub const FORMAT_VERSION: u64 = 1;
pub const BUNDLE_EXTENSION: &str = "arproof";
const IMAGE_DOMAIN: &[u8] = b"attestrep-image-v1";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("execution exited with status {0}; proofs are only issued for successful runs")]
    NonZeroExit(i32),
    #[error(transparent)]
    Attestation(#[from] AttestationError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("parse error at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("unsupported bundle format version {0}")]
    VersionUnsupported(u64),
}

/// The parts of an [`ExecutionRecord`] that are published.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionSummary {
    pub exit_status: i32,
    pub wall_seconds: f64,
    pub started_at: u64,
    pub finished_at: u64,
    pub stdout_log_digest: Digest32,
    pub stderr_log_digest: Digest32,
    pub nonce: Digest32,
}

impl From<&ExecutionRecord> for ExecutionSummary {
    fn from(r: &ExecutionRecord) -> Self {
        Self {
            exit_status: r.exit_status,
            wall_seconds: r.wall_seconds,
            started_at: r.started_at,
            finished_at: r.finished_at,
            stdout_log_digest: r.stdout_log_digest,
            stderr_log_digest: r.stderr_log_digest,
            nonce: r.nonce,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProofBundle {
    pub format_version: u64,
    pub package_digest: PackageDigest,
    pub output_digest: PackageDigest,
    pub execution: ExecutionSummary,
    pub quote: AttestationQuote,
    pub chain: EndorsementChain,
    pub bundle_id: Digest32,
}

/// Everything but `bundle_id`; its canonical form is what the id hashes.
#[derive(Serialize)]
struct BundleBody<'a> {
    format_version: u64,
    package_digest: &'a PackageDigest,
    output_digest: &'a PackageDigest,
    execution: &'a ExecutionSummary,
    quote: &'a AttestationQuote,
    chain: &'a EndorsementChain,
}

/// Simulated code-image measurement for a package.
pub fn image_measurement(package_digest: &Digest32) -> Digest32 {
    sha256(&[IMAGE_DOMAIN, package_digest.as_bytes()])
}

pub fn binding_report_data(
    package_digest: &Digest32,
    output_digest: &Digest32,
    nonce: &Digest32,
) -> ReportData {
    let binding = sha256(&[
        package_digest.as_bytes(),
        output_digest.as_bytes(),
        nonce.as_bytes(),
    ]);
    let mut data = [0u8; 64];
    data[..32].copy_from_slice(binding.as_bytes());
    ReportData::from(data)
}

impl ProofBundle {
    pub fn compute_id(&self) -> Digest32 {
        let body = BundleBody {
            format_version: self.format_version,
            package_digest: &self.package_digest,
            output_digest: &self.output_digest,
            execution: &self.execution,
            quote: &self.quote,
            chain: &self.chain,
        };
        sha256(&[&to_canonical_vec(&body).expect("bundle body serializes")])
    }

    pub fn token(&self) -> String {
        self.bundle_id.to_hex()
    }

    pub fn expected_measurement(&self) -> Digest32 {
        image_measurement(&self.package_digest.value)
    }

    pub fn expected_report_data(&self) -> ReportData {
        binding_report_data(
            &self.package_digest.value,
            &self.output_digest.value,
            &self.execution.nonce,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serialize_bundle(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ParseError> {
        parse_bundle(bytes)
    }
}

/// Attests a successful run: computes the binding, asks the provider for a
/// quote and seals the bundle id.
pub fn build_bundle(
    record: &ExecutionRecord,
    provider: &AttestationProvider,
) -> Result<ProofBundle, BundleError> {
    if record.exit_status != 0 {
        return Err(BundleError::NonZeroExit(record.exit_status));
    }
    let measurement = image_measurement(&record.package_digest.value);
    let report_data = binding_report_data(
        &record.package_digest.value,
        &record.output_digest.value,
        &record.nonce,
    );
    let quote = provider.sign_quote(measurement.as_bytes(), report_data.as_bytes())?;
    Ok(seal(record, quote, provider.export_chain()))
}

pub(crate) fn seal(
    record: &ExecutionRecord,
    quote: AttestationQuote,
    chain: EndorsementChain,
) -> ProofBundle {
    let mut bundle = ProofBundle {
        format_version: FORMAT_VERSION,
        package_digest: record.package_digest,
        output_digest: record.output_digest,
        execution: ExecutionSummary::from(record),
        quote,
        chain,
        bundle_id: Digest32::zero(),
    };
    bundle.bundle_id = bundle.compute_id();
    bundle
}

pub fn serialize_bundle(bundle: &ProofBundle) -> Vec<u8> {
    to_canonical_vec(bundle).expect("bundle serializes")
}

pub fn parse_bundle(bytes: &[u8]) -> Result<ProofBundle, ParseError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| ParseError::Malformed {
        offset: json_error_offset(bytes, &e),
        reason: e.to_string(),
    })?;

    match value.get("format_version").and_then(Value::as_u64) {
        Some(FORMAT_VERSION) => {}
        Some(other) => return Err(ParseError::VersionUnsupported(other)),
        None => {
            return Err(ParseError::Malformed {
                offset: 0,
                reason: "missing or non-integer format_version".into(),
            })
        }
    }

    let canonical = value_to_canonical_vec(&value);
    if let Some(offset) = first_difference(bytes, &canonical) {
        return Err(ParseError::Malformed {
            offset,
            reason: "not in canonical form".into(),
        });
    }

    serde_json::from_value(value).map_err(|e| ParseError::Malformed {
        offset: 0,
        reason: e.to_string(),
    })
}

fn json_error_offset(bytes: &[u8], err: &serde_json::Error) -> usize {
    // serde_json reports 1-based line/column; canonical bundles are one line
    let mut line = 1;
    let mut line_start = 0;
    for (i, b) in bytes.iter().enumerate() {
        if line == err.line() {
            break;
        }
        if *b == b'\n' {
            line += 1;
            line_start = i + 1;
        }
    }
    (line_start + err.column().saturating_sub(1)).min(bytes.len())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::attestation::ProviderConfig;
    use crate::bytes::HexBytes;
    use crate::clock::FixedClock;
    use std::path::PathBuf;
    use std::sync::Arc;

    pub(crate) const T0: u64 = 1_700_000_000;

    pub(crate) fn fixture_provider() -> AttestationProvider {
        let mut cfg = ProviderConfig::simulated(vec![0u8; 32]);
        cfg.valid_from = Some(T0);
        AttestationProvider::init_with_clock(cfg, Arc::new(FixedClock::new(T0 + 60))).unwrap()
    }

    pub(crate) fn fixture_record(exit_status: i32) -> ExecutionRecord {
        let digest = |b: u8, n: u64| PackageDigest {
            value: HexBytes([b; 32]),
            file_count: n,
            total_bytes: 10 * n,
        };
        ExecutionRecord {
            package_digest: digest(0xaa, 3),
            output_digest: digest(0xbb, 1),
            exit_status,
            wall_seconds: 1.5,
            stdout_log_digest: HexBytes([0x01; 32]),
            stderr_log_digest: HexBytes([0x02; 32]),
            started_at: T0 + 10,
            finished_at: T0 + 12,
            nonce: HexBytes([0x33; 32]),
            job_dir: PathBuf::new(),
        }
    }

    // Frozen after the first correct build.
    const GOLDEN_BUNDLE_ID: &str = "3567d03a89b4843ea623a84bbe7ab47e0b530eb3fcacdf5abed3676b9ca5a611";
    const GOLDEN_BUNDLE_SHA256: &str = "73099db4ee4fc9daa22f6a90a8e16b6e019659c29ac4365f9c229d53fb4722bf";

    #[test]
    fn golden_bundle_bytes() {
        let bundle = build_bundle(&fixture_record(0), &fixture_provider()).unwrap();
        let bytes = serialize_bundle(&bundle);
        assert_eq!(bundle.bundle_id.to_hex(), GOLDEN_BUNDLE_ID);
        assert_eq!(sha256(&[&bytes]).to_hex(), GOLDEN_BUNDLE_SHA256);
        assert!(bytes.starts_with(br#"{"bundle_id":""#));
    }

    #[test]
    fn binding_fields_follow_the_scheme() {
        let record = fixture_record(0);
        let bundle = build_bundle(&record, &fixture_provider()).unwrap();
        let mut pre = Vec::new();
        pre.extend_from_slice(&[0xaa; 32]);
        pre.extend_from_slice(&[0xbb; 32]);
        pre.extend_from_slice(&[0x33; 32]);
        assert_eq!(&bundle.quote.report_data.0[..32], sha256(&[&pre]).as_bytes());
        assert_eq!(&bundle.quote.report_data.0[32..], &[0u8; 32]);
        assert_eq!(
            bundle.quote.measurement,
            sha256(&[b"attestrep-image-v1", &[0xaa; 32]])
        );
        assert_eq!(bundle.bundle_id, bundle.compute_id());
    }

    #[test]
    fn non_zero_exit_is_refused() {
        let err = build_bundle(&fixture_record(1), &fixture_provider()).unwrap_err();
        assert!(matches!(err, BundleError::NonZeroExit(1)));
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bundle = build_bundle(&fixture_record(0), &fixture_provider()).unwrap();
        let bytes = serialize_bundle(&bundle);
        let parsed = parse_bundle(&bytes).unwrap();
        assert_eq!(parsed, bundle);
        assert_eq!(serialize_bundle(&parsed), bytes);
    }

    #[test]
    fn truncated_bytes_fail_to_parse() {
        let bytes = serialize_bundle(&build_bundle(&fixture_record(0), &fixture_provider()).unwrap());
        for cut in [0, 1, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                parse_bundle(&bytes[..cut]),
                Err(ParseError::Malformed { .. })
            ));
        }
    }

    #[test]
    fn version_two_is_unsupported() {
        let mut bundle = build_bundle(&fixture_record(0), &fixture_provider()).unwrap();
        bundle.format_version = 2;
        assert_eq!(
            parse_bundle(&serialize_bundle(&bundle)).unwrap_err(),
            ParseError::VersionUnsupported(2)
        );
    }

    #[test]
    fn non_canonical_encodings_are_rejected() {
        let bytes = serialize_bundle(&build_bundle(&fixture_record(0), &fixture_provider()).unwrap());
        let mut spaced = b"{ ".to_vec();
        spaced.extend_from_slice(&bytes[1..]);
        assert!(matches!(
            parse_bundle(&spaced),
            Err(ParseError::Malformed { offset: 1, .. })
        ));

        // uppercase hex decodes to the same bytes but is not canonical
        let mut upper = bytes.clone();
        let prefix = br#"{"bundle_id":""#.len();
        let letter = prefix
            + upper[prefix..]
                .iter()
                .position(|b| (b'a'..=b'f').contains(b))
                .unwrap();
        upper[letter] = upper[letter].to_ascii_uppercase();
        assert!(matches!(parse_bundle(&upper), Err(ParseError::Malformed { .. })));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bundle = build_bundle(&fixture_record(0), &fixture_provider()).unwrap();
        let mut value = serde_json::to_value(&bundle).unwrap();
        value["extra"] = serde_json::json!(1);
        let bytes = value_to_canonical_vec(&value);
        assert!(matches!(parse_bundle(&bytes), Err(ParseError::Malformed { .. })));
    }

    #[test]
    fn runs_differing_only_in_nonce_have_distinct_ids() {
        let provider = fixture_provider();
        let a = build_bundle(&fixture_record(0), &provider).unwrap();
        let mut other = fixture_record(0);
        other.nonce = HexBytes([0x34; 32]);
        let b = build_bundle(&other, &provider).unwrap();
        assert_ne!(a.bundle_id, b.bundle_id);
        assert_eq!(a.package_digest, b.package_digest);
        assert_eq!(a.output_digest, b.output_digest);
    }
}

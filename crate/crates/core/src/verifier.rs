//! Stateless verification of proof bundles.
//!
//! Checks run in a fixed order and the first failure is reported:
//! parse, chain, validity window, quote signature, binding (measurement and
//! report data), bundle id, exit status. Only digests are touched, so the
//! cost does not depend on package size.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attestation::{key_fingerprint, ChainError, QUOTE_VERSION};
use crate::bundle::{parse_bundle, ParseError, ProofBundle};
use crate::bytes::PublicKeyBytes;
use crate::package::PackageDigest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail")]
pub enum RejectReason {
    Malformed(String),
    VersionUnsupported(u64),
    UntrustedRoot,
    BadRootSignature,
    BadEndorsementSignature,
    InvalidEndorsementWindow,
    BadKey,
    ExpiredEndorsement,
    EndorsementNotYetValid,
    SigningKeyMismatch,
    UnsupportedQuoteVersion(u32),
    BadQuoteSignature,
    MeasurementMismatch,
    ReportDataMismatch,
    BundleIdMismatch,
    NonZeroExit(i32),
    DigestMismatch,
}

impl RejectReason {
    pub fn name(&self) -> &'static str {
        match self {
            RejectReason::Malformed(_) => "Malformed",
            RejectReason::VersionUnsupported(_) => "VersionUnsupported",
            RejectReason::UntrustedRoot => "UntrustedRoot",
            RejectReason::BadRootSignature => "BadRootSignature",
            RejectReason::BadEndorsementSignature => "BadEndorsementSignature",
            RejectReason::InvalidEndorsementWindow => "InvalidEndorsementWindow",
            RejectReason::BadKey => "BadKey",
            RejectReason::ExpiredEndorsement => "ExpiredEndorsement",
            RejectReason::EndorsementNotYetValid => "EndorsementNotYetValid",
            RejectReason::SigningKeyMismatch => "SigningKeyMismatch",
            RejectReason::UnsupportedQuoteVersion(_) => "UnsupportedQuoteVersion",
            RejectReason::BadQuoteSignature => "BadQuoteSignature",
            RejectReason::MeasurementMismatch => "MeasurementMismatch",
            RejectReason::ReportDataMismatch => "ReportDataMismatch",
            RejectReason::BundleIdMismatch => "BundleIdMismatch",
            RejectReason::NonZeroExit(_) => "NonZeroExit",
            RejectReason::DigestMismatch => "DigestMismatch",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Malformed(why) => write!(f, "Malformed({why})"),
            RejectReason::VersionUnsupported(v) => write!(f, "VersionUnsupported({v})"),
            RejectReason::UnsupportedQuoteVersion(v) => write!(f, "UnsupportedQuoteVersion({v})"),
            RejectReason::NonZeroExit(s) => write!(f, "NonZeroExit({s})"),
            other => f.write_str(other.name()),
        }
    }
}

impl From<ChainError> for RejectReason {
    fn from(e: ChainError) -> Self {
        match e {
            ChainError::UntrustedRoot => RejectReason::UntrustedRoot,
            ChainError::BadRootSignature => RejectReason::BadRootSignature,
            ChainError::BadEndorsementSignature => RejectReason::BadEndorsementSignature,
            ChainError::InvalidWindow => RejectReason::InvalidEndorsementWindow,
            ChainError::BadKey => RejectReason::BadKey,
            ChainError::Expired => RejectReason::ExpiredEndorsement,
            ChainError::NotYetValid => RejectReason::EndorsementNotYetValid,
        }
    }
}

impl From<ParseError> for RejectReason {
    fn from(e: ParseError) -> Self {
        match e {
            ParseError::VersionUnsupported(v) => RejectReason::VersionUnsupported(v),
            other => RejectReason::Malformed(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject {
        #[serde(flatten)]
        reason: RejectReason,
    },
}

impl Verdict {
    pub fn reject(reason: RejectReason) -> Self {
        Verdict::Reject { reason }
    }

    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }

    pub fn reason(&self) -> Option<&RejectReason> {
        match self {
            Verdict::Accept => None,
            Verdict::Reject { reason } => Some(reason),
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Accept => f.write_str("Accept"),
            Verdict::Reject { reason } => write!(f, "Reject({reason})"),
        }
    }
}

/// Verifies serialized bundle bytes against `trust_roots` at time `now`.
pub fn verify_bundle(bytes: &[u8], trust_roots: &[PublicKeyBytes], now: u64) -> Verdict {
    match parse_bundle(bytes) {
        Ok(bundle) => verify_parsed(&bundle, trust_roots, now),
        Err(e) => Verdict::reject(e.into()),
    }
}

pub fn verify_parsed(bundle: &ProofBundle, trust_roots: &[PublicKeyBytes], now: u64) -> Verdict {
    match check(bundle, trust_roots, now) {
        Ok(()) => Verdict::Accept,
        Err(reason) => Verdict::reject(reason),
    }
}

fn check(bundle: &ProofBundle, trust_roots: &[PublicKeyBytes], now: u64) -> Result<(), RejectReason> {
    let attestation_key = bundle.chain.verify(trust_roots)?;
    bundle.chain.check_validity(now)?;

    let quote = &bundle.quote;
    if quote.signing_key_id
        != key_fingerprint(&bundle.chain.attestation_endorsement.attestation_public_key)
    {
        return Err(RejectReason::SigningKeyMismatch);
    }
    if quote.version != QUOTE_VERSION {
        return Err(RejectReason::UnsupportedQuoteVersion(quote.version));
    }
    if !quote.verify_signature(&attestation_key) {
        return Err(RejectReason::BadQuoteSignature);
    }

    if quote.measurement != bundle.expected_measurement() {
        return Err(RejectReason::MeasurementMismatch);
    }
    if quote.report_data != bundle.expected_report_data() {
        return Err(RejectReason::ReportDataMismatch);
    }
    if bundle.bundle_id != bundle.compute_id() {
        return Err(RejectReason::BundleIdMismatch);
    }
    if bundle.execution.exit_status != 0 {
        return Err(RejectReason::NonZeroExit(bundle.execution.exit_status));
    }
    Ok(())
}

/// Compares an accepted bundle with the digest the archive holds for its package.
pub fn verify_against_archive(bundle: &ProofBundle, archived: &PackageDigest) -> Verdict {
    if bundle.package_digest == *archived {
        Verdict::Accept
    } else {
        Verdict::reject(RejectReason::DigestMismatch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attestation::{AttestationProvider, ProviderConfig};
    use crate::bundle::tests::{fixture_provider, fixture_record, T0};
    use crate::bundle::{build_bundle, seal, serialize_bundle};
    use crate::bytes::HexBytes;
    use crate::canonical::value_to_canonical_vec;

    fn golden() -> (Vec<u8>, PublicKeyBytes) {
        let provider = fixture_provider();
        let bundle = build_bundle(&fixture_record(0), &provider).unwrap();
        (serialize_bundle(&bundle), provider.root_public_key())
    }

    #[test]
    fn golden_bundle_accepts() {
        let (bytes, root) = golden();
        assert_eq!(verify_bundle(&bytes, &[root], T0 + 100), Verdict::Accept);
    }

    #[test]
    fn other_provider_root_is_untrusted() {
        let (bytes, _) = golden();
        let other = AttestationProvider::init(ProviderConfig::simulated(vec![5u8; 32])).unwrap();
        assert_eq!(
            verify_bundle(&bytes, &[other.root_public_key()], T0 + 100),
            Verdict::reject(RejectReason::UntrustedRoot)
        );
        assert_eq!(
            verify_bundle(&bytes, &[], T0 + 100),
            Verdict::reject(RejectReason::UntrustedRoot)
        );
    }

    #[test]
    fn swapped_output_digest_breaks_binding() {
        let (bytes, root) = golden();
        let mut value: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        value["output_digest"]["value"] = serde_json::json!("cc".repeat(32));
        let edited = value_to_canonical_vec(&value);
        assert_eq!(
            verify_bundle(&edited, &[root], T0 + 100),
            Verdict::reject(RejectReason::ReportDataMismatch)
        );
    }

    #[test]
    fn swapped_package_digest_breaks_measurement() {
        let (bytes, root) = golden();
        let mut value: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        value["package_digest"]["value"] = serde_json::json!("cc".repeat(32));
        let edited = value_to_canonical_vec(&value);
        assert_eq!(
            verify_bundle(&edited, &[root], T0 + 100),
            Verdict::reject(RejectReason::MeasurementMismatch)
        );
    }

    #[test]
    fn validity_window_is_enforced() {
        let (bytes, root) = golden();
        let provider = fixture_provider();
        let not_after = provider.export_chain().attestation_endorsement.not_after;
        assert_eq!(
            verify_bundle(&bytes, &[root], not_after + 1),
            Verdict::reject(RejectReason::ExpiredEndorsement)
        );
        assert_eq!(
            verify_bundle(&bytes, &[root], T0 - 1),
            Verdict::reject(RejectReason::EndorsementNotYetValid)
        );
    }

    #[test]
    fn past_window_reports_expired() {
        let mut cfg = ProviderConfig::simulated(vec![0u8; 32]);
        cfg.valid_from = Some(1_000);
        cfg.attestation_validity = 10;
        let provider = AttestationProvider::init(cfg).unwrap();
        let bytes = serialize_bundle(&build_bundle(&fixture_record(0), &provider).unwrap());
        assert_eq!(
            verify_bundle(&bytes, &[provider.root_public_key()], T0),
            Verdict::reject(RejectReason::ExpiredEndorsement)
        );
    }

    #[test]
    fn tampered_endorsement_signature() {
        let provider = fixture_provider();
        let mut bundle = build_bundle(&fixture_record(0), &provider).unwrap();
        bundle.chain.attestation_endorsement.signature.0[0] ^= 0x80;
        bundle.bundle_id = bundle.compute_id();
        assert_eq!(
            verify_parsed(&bundle, &[provider.root_public_key()], T0 + 100),
            Verdict::reject(RejectReason::BadEndorsementSignature)
        );
    }

    #[test]
    fn recomputed_id_does_not_rescue_an_edited_quote() {
        let provider = fixture_provider();
        let mut bundle = build_bundle(&fixture_record(0), &provider).unwrap();
        bundle.quote.issued_at += 1;
        bundle.bundle_id = bundle.compute_id();
        assert_eq!(
            verify_parsed(&bundle, &[provider.root_public_key()], T0 + 100),
            Verdict::reject(RejectReason::BadQuoteSignature)
        );
    }

    #[test]
    fn stale_bundle_id_is_caught() {
        let provider = fixture_provider();
        let mut bundle = build_bundle(&fixture_record(0), &provider).unwrap();
        bundle.execution.wall_seconds = 99.0;
        assert_eq!(
            verify_parsed(&bundle, &[provider.root_public_key()], T0 + 100),
            Verdict::reject(RejectReason::BundleIdMismatch)
        );
    }

    #[test]
    fn failed_runs_never_verify() {
        // a provider that signs anyway must still be rejected on exit status
        let provider = fixture_provider();
        let record = fixture_record(3);
        let quote = provider
            .sign_quote(
                crate::bundle::image_measurement(&record.package_digest.value).as_bytes(),
                crate::bundle::binding_report_data(
                    &record.package_digest.value,
                    &record.output_digest.value,
                    &record.nonce,
                )
                .as_bytes(),
            )
            .unwrap();
        let bundle = seal(&record, quote, provider.export_chain());
        assert_eq!(
            verify_parsed(&bundle, &[provider.root_public_key()], T0 + 100),
            Verdict::reject(RejectReason::NonZeroExit(3))
        );
    }

    #[test]
    fn archive_comparison() {
        let provider = fixture_provider();
        let bundle = build_bundle(&fixture_record(0), &provider).unwrap();
        assert_eq!(
            verify_against_archive(&bundle, &bundle.package_digest),
            Verdict::Accept
        );
        let mut other = bundle.package_digest;
        other.value = HexBytes([0xab; 32]);
        assert_eq!(
            verify_against_archive(&bundle, &other),
            Verdict::reject(RejectReason::DigestMismatch)
        );
    }

    #[test]
    fn verdict_json_shape() {
        assert_eq!(
            serde_json::to_string(&Verdict::Accept).unwrap(),
            r#"{"verdict":"accept"}"#
        );
        assert_eq!(
            serde_json::to_string(&Verdict::reject(RejectReason::DigestMismatch)).unwrap(),
            r#"{"verdict":"reject","reason":"DigestMismatch"}"#
        );
        let v = Verdict::reject(RejectReason::NonZeroExit(2));
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Verdict>(&s).unwrap(), v);
    }
}

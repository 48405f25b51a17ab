//! Simulated VM-level TEE attestation.
//!
//! A provider holds two Ed25519 keys: a vendor root key and an attestation
//! key endorsed by it. Quotes carry a 32-byte code-image measurement and 64
//! bytes of caller-controlled report data, signed by the attestation key over
//! the canonical JSON of
//! `{issued_at, measurement, provider_id, report_data, version}`.
//!
//! A hardware backend would replace [`AttestationProvider`] with a client for
//! the vendor quoting service and supply its vendor-issued chain in place of
//! the self-generated [`EndorsementChain`].

use std::sync::Arc;

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bytes::{sha256, Digest32, HexBytes, PublicKeyBytes, ReportData, SignatureBytes};
use crate::canonical::to_canonical_vec;
use crate::clock::{Clock, SystemClock};

pub const QUOTE_VERSION: u32 = 1;
pub const SIM_PROVIDER_ID: &str = "SIM-VMTEE-1";
pub const SEED_LEN: usize = 32;
/// Default endorsement lifetime: one year.
pub const DEFAULT_ATTESTATION_VALIDITY: u64 = 365 * 24 * 3600;

const ATTEST_KEY_LABEL: &[u8] = b"attest-key-v1";
const ROOT_STATEMENT_KIND: &str = "attestrep-root-v1";
const ENDORSEMENT_KIND: &str = "attestrep-endorsement-v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttestationError {
    #[error("root secret seed must be {SEED_LEN} bytes, got {0}")]
    BadSeedLength(usize),
    #[error("attestation validity must be positive")]
    BadValidity,
    #[error("measurement must be 32 bytes, got {0}")]
    BadMeasurementLength(usize),
    #[error("report data must be 64 bytes, got {0}")]
    BadReportDataLength(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("root key is not among the trusted roots")]
    UntrustedRoot,
    #[error("root statement signature does not verify")]
    BadRootSignature,
    #[error("endorsement signature does not verify under the root key")]
    BadEndorsementSignature,
    #[error("endorsement window is empty (not_before >= not_after)")]
    InvalidWindow,
    #[error("public key bytes are not a valid Ed25519 point")]
    BadKey,
    #[error("endorsement has expired")]
    Expired,
    #[error("endorsement is not yet valid")]
    NotYetValid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderConfig {
    pub provider_id: String,
    /// Simulation only; real backends obtain keys from hardware.
    pub root_secret_seed: Vec<u8>,
    /// Endorsement lifetime in seconds.
    pub attestation_validity: u64,
    /// Start of the endorsement window; `None` means "now" at init.
    pub valid_from: Option<u64>,
}

impl ProviderConfig {
    pub fn simulated(root_secret_seed: impl Into<Vec<u8>>) -> Self {
        Self {
            provider_id: SIM_PROVIDER_ID.to_string(),
            root_secret_seed: root_secret_seed.into(),
            attestation_validity: DEFAULT_ATTESTATION_VALIDITY,
            valid_from: None,
        }
    }
}

/// The signed portion of a quote.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuoteBody {
    pub version: u32,
    pub provider_id: String,
    pub measurement: Digest32,
    pub report_data: ReportData,
    pub issued_at: u64,
}

impl QuoteBody {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        to_canonical_vec(self).expect("quote body serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttestationQuote {
    pub version: u32,
    pub provider_id: String,
    pub measurement: Digest32,
    pub report_data: ReportData,
    pub issued_at: u64,
    pub signature: SignatureBytes,
    pub signing_key_id: Digest32,
}

impl AttestationQuote {
    pub fn body(&self) -> QuoteBody {
        QuoteBody {
            version: self.version,
            provider_id: self.provider_id.clone(),
            measurement: self.measurement,
            report_data: self.report_data,
            issued_at: self.issued_at,
        }
    }

    pub fn verify_signature(&self, key: &VerifyingKey) -> bool {
        let signature = Signature::from_bytes(self.signature.as_bytes());
        key.verify_strict(&self.body().canonical_bytes(), &signature)
            .is_ok()
    }
}

/// Self-signed statement naming the simulated vendor root key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RootStatement {
    pub provider_id: String,
    pub root_public_key: PublicKeyBytes,
    pub signature: SignatureBytes,
}

#[derive(Serialize)]
struct RootStatementBody<'a> {
    kind: &'static str,
    provider_id: &'a str,
    root_public_key: &'a PublicKeyBytes,
}

impl RootStatement {
    fn signed_bytes(&self) -> Vec<u8> {
        to_canonical_vec(&RootStatementBody {
            kind: ROOT_STATEMENT_KIND,
            provider_id: &self.provider_id,
            root_public_key: &self.root_public_key,
        })
        .expect("root statement serializes")
    }
}

/// Root-signed endorsement of the attestation key, valid on `[not_before, not_after]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttestationEndorsement {
    pub attestation_public_key: PublicKeyBytes,
    pub not_before: u64,
    pub not_after: u64,
    pub signature: SignatureBytes,
}

#[derive(Serialize)]
struct EndorsementBody<'a> {
    attestation_public_key: &'a PublicKeyBytes,
    kind: &'static str,
    not_after: u64,
    not_before: u64,
    root_public_key: &'a PublicKeyBytes,
}

impl AttestationEndorsement {
    fn signed_bytes(&self, root: &PublicKeyBytes) -> Vec<u8> {
        to_canonical_vec(&EndorsementBody {
            attestation_public_key: &self.attestation_public_key,
            kind: ENDORSEMENT_KIND,
            not_after: self.not_after,
            not_before: self.not_before,
            root_public_key: root,
        })
        .expect("endorsement serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndorsementChain {
    pub root_statement: RootStatement,
    pub attestation_endorsement: AttestationEndorsement,
}

impl EndorsementChain {
    pub fn root_public_key(&self) -> PublicKeyBytes {
        self.root_statement.root_public_key
    }

    /// Checks the chain's signatures against one of `trust_roots` and returns
    /// the endorsed attestation key. The time window is checked separately by
    /// [`EndorsementChain::check_validity`].
    pub fn verify(&self, trust_roots: &[PublicKeyBytes]) -> Result<VerifyingKey, ChainError> {
        let root_bytes = self.root_statement.root_public_key;
        if !trust_roots.contains(&root_bytes) {
            return Err(ChainError::UntrustedRoot);
        }
        let root = VerifyingKey::from_bytes(root_bytes.as_bytes()).map_err(|_| ChainError::BadKey)?;

        let root_sig = Signature::from_bytes(self.root_statement.signature.as_bytes());
        root.verify_strict(&self.root_statement.signed_bytes(), &root_sig)
            .map_err(|_| ChainError::BadRootSignature)?;

        let endorsement = &self.attestation_endorsement;
        let endorse_sig = Signature::from_bytes(endorsement.signature.as_bytes());
        root.verify_strict(&endorsement.signed_bytes(&root_bytes), &endorse_sig)
            .map_err(|_| ChainError::BadEndorsementSignature)?;
        if endorsement.not_before >= endorsement.not_after {
            return Err(ChainError::InvalidWindow);
        }

        VerifyingKey::from_bytes(endorsement.attestation_public_key.as_bytes())
            .map_err(|_| ChainError::BadKey)
    }

    pub fn check_validity(&self, now: u64) -> Result<(), ChainError> {
        let e = &self.attestation_endorsement;
        if now < e.not_before {
            Err(ChainError::NotYetValid)
        } else if now > e.not_after {
            Err(ChainError::Expired)
        } else {
            Ok(())
        }
    }
}

pub fn key_fingerprint(key: &PublicKeyBytes) -> Digest32 {
    sha256(&[key.as_bytes()])
}

/// Simulated quoting enclave. Read-only after construction; safe to share
/// across threads.
pub struct AttestationProvider {
    provider_id: String,
    attestation_key: SigningKey,
    chain: EndorsementChain,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for AttestationProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AttestationProvider")
            .field("provider_id", &self.provider_id)
            .field("root_public_key", &self.chain.root_public_key())
            .finish_non_exhaustive()
    }
}

impl AttestationProvider {
    pub fn init(config: ProviderConfig) -> Result<Self, AttestationError> {
        Self::init_with_clock(config, Arc::new(SystemClock))
    }

    pub fn init_with_clock(
        config: ProviderConfig,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, AttestationError> {
        let seed: [u8; SEED_LEN] = config
            .root_secret_seed
            .as_slice()
            .try_into()
            .map_err(|_| AttestationError::BadSeedLength(config.root_secret_seed.len()))?;
        if config.attestation_validity == 0 {
            return Err(AttestationError::BadValidity);
        }

        let root_key = SigningKey::from_bytes(&seed);
        let attest_seed = sha256(&[&seed, ATTEST_KEY_LABEL]);
        let attestation_key = SigningKey::from_bytes(attest_seed.as_bytes());

        let root_public_key = HexBytes(root_key.verifying_key().to_bytes());
        let mut root_statement = RootStatement {
            provider_id: config.provider_id.clone(),
            root_public_key,
            signature: SignatureBytes::zero(),
        };
        root_statement.signature = HexBytes(root_key.sign(&root_statement.signed_bytes()).to_bytes());

        let not_before = config.valid_from.unwrap_or_else(|| clock.now());
        let mut attestation_endorsement = AttestationEndorsement {
            attestation_public_key: HexBytes(attestation_key.verifying_key().to_bytes()),
            not_before,
            not_after: not_before.saturating_add(config.attestation_validity),
            signature: SignatureBytes::zero(),
        };
        attestation_endorsement.signature = HexBytes(
            root_key
                .sign(&attestation_endorsement.signed_bytes(&root_public_key))
                .to_bytes(),
        );

        Ok(Self {
            provider_id: config.provider_id,
            attestation_key,
            chain: EndorsementChain {
                root_statement,
                attestation_endorsement,
            },
            clock,
        })
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn root_public_key(&self) -> PublicKeyBytes {
        self.chain.root_public_key()
    }

    pub fn signing_key_id(&self) -> Digest32 {
        key_fingerprint(&self.chain.attestation_endorsement.attestation_public_key)
    }

    pub fn export_chain(&self) -> EndorsementChain {
        self.chain.clone()
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn sign_quote(
        &self,
        measurement: &[u8],
        report_data: &[u8],
    ) -> Result<AttestationQuote, AttestationError> {
        self.sign_quote_at(measurement, report_data, self.clock.now())
    }

    /// Like [`sign_quote`](Self::sign_quote) with an explicit `issued_at`.
    pub fn sign_quote_at(
        &self,
        measurement: &[u8],
        report_data: &[u8],
        issued_at: u64,
    ) -> Result<AttestationQuote, AttestationError> {
        let measurement = Digest32::from_slice(measurement)
            .ok_or(AttestationError::BadMeasurementLength(measurement.len()))?;
        let report_data = ReportData::from_slice(report_data)
            .ok_or(AttestationError::BadReportDataLength(report_data.len()))?;
        let body = QuoteBody {
            version: QUOTE_VERSION,
            provider_id: self.provider_id.clone(),
            measurement,
            report_data,
            issued_at,
        };
        let signature = self.attestation_key.sign(&body.canonical_bytes());
        Ok(AttestationQuote {
            version: body.version,
            provider_id: body.provider_id,
            measurement: body.measurement,
            report_data: body.report_data,
            issued_at: body.issued_at,
            signature: HexBytes(signature.to_bytes()),
            signing_key_id: self.signing_key_id(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::FixedClock;

    const T0: u64 = 1_700_000_000;

    fn provider(seed: [u8; 32]) -> AttestationProvider {
        let mut cfg = ProviderConfig::simulated(seed.to_vec());
        cfg.valid_from = Some(T0);
        AttestationProvider::init_with_clock(cfg, Arc::new(FixedClock::new(T0))).unwrap()
    }

    // Captured from the first correct build and frozen.
    const ZERO_SEED_ROOT: &str = "3b6a27bcceb6a42d62a3a8d02a6f0d73653215771de243a63ac048a18b59da29";
    const GOLDEN_QUOTE: &str = r#"{"issued_at":1700000000,"measurement":"1111111111111111111111111111111111111111111111111111111111111111","provider_id":"SIM-VMTEE-1","report_data":"22222222222222222222222222222222222222222222222222222222222222222222222222222222222222222222222222222222222222222222222222222222","signature":"9a811560d81a5c89a917b4157b678e41af302c05238a7b1652ef9caf770741654f1dc0cca37ce0ccb1a2e656bce8a757fa34f47760724a1fa2f9623347fe2508","signing_key_id":"4c57fae718c74e65e017fd77f4e5d39da818a56dcf8ff8b12efbd482a8e9ca65","version":1}"#;

    #[test]
    fn zero_seed_root_key_is_stable() {
        assert_eq!(provider([0; 32]).root_public_key().to_hex(), ZERO_SEED_ROOT);
    }

    #[test]
    fn short_seed_rejected() {
        let err = AttestationProvider::init(ProviderConfig::simulated(vec![0u8; 31])).unwrap_err();
        assert_eq!(err, AttestationError::BadSeedLength(31));
    }

    #[test]
    fn distinct_seeds_distinct_roots() {
        assert_ne!(
            provider([0; 32]).root_public_key(),
            provider([1; 32]).root_public_key()
        );
    }

    #[test]
    fn golden_quote_is_byte_identical() {
        let p = provider([0; 32]);
        let q = p.sign_quote(&[0x11; 32], &[0x22; 64]).unwrap();
        let again = p.sign_quote(&[0x11; 32], &[0x22; 64]).unwrap();
        let bytes = to_canonical_vec(&q).unwrap();
        assert_eq!(bytes, to_canonical_vec(&again).unwrap());
        assert_eq!(String::from_utf8(bytes).unwrap(), GOLDEN_QUOTE);
    }

    #[test]
    fn argument_lengths_are_checked() {
        let p = provider([0; 32]);
        assert_eq!(
            p.sign_quote(&[0; 32], &[0; 63]).unwrap_err(),
            AttestationError::BadReportDataLength(63)
        );
        assert_eq!(
            p.sign_quote(&[0; 31], &[0; 64]).unwrap_err(),
            AttestationError::BadMeasurementLength(31)
        );
    }

    #[test]
    fn different_measurements_different_signatures() {
        let p = provider([0; 32]);
        let a = p.sign_quote(&[1; 32], &[0; 64]).unwrap();
        let b = p.sign_quote(&[2; 32], &[0; 64]).unwrap();
        assert_ne!(a.signature, b.signature);
        assert_ne!(a.body().canonical_bytes(), b.body().canonical_bytes());
    }

    #[test]
    fn quote_verifies_under_endorsed_key() {
        let p = provider([7; 32]);
        let q = p.sign_quote(&[3; 32], &[4; 64]).unwrap();
        let key = p.export_chain().verify(&[p.root_public_key()]).unwrap();
        assert!(q.verify_signature(&key));
        assert_eq!(q.signing_key_id, p.signing_key_id());
    }

    #[test]
    fn chain_verifies_only_under_own_root() {
        let a = provider([0; 32]);
        let b = provider([9; 32]);
        let chain = a.export_chain();
        assert!(chain.verify(&[a.root_public_key()]).is_ok());
        assert_eq!(
            chain.verify(&[b.root_public_key()]).unwrap_err(),
            ChainError::UntrustedRoot
        );
        assert!(chain
            .verify(&[b.root_public_key(), a.root_public_key()])
            .is_ok());
    }

    #[test]
    fn flipped_endorsement_signature_fails() {
        let p = provider([0; 32]);
        let mut chain = p.export_chain();
        chain.attestation_endorsement.signature.0[5] ^= 0x01;
        assert_eq!(
            chain.verify(&[p.root_public_key()]).unwrap_err(),
            ChainError::BadEndorsementSignature
        );
    }

    #[test]
    fn validity_window() {
        let mut cfg = ProviderConfig::simulated(vec![0u8; 32]);
        cfg.valid_from = Some(1000);
        cfg.attestation_validity = 100;
        let p = AttestationProvider::init(cfg).unwrap();
        let chain = p.export_chain();
        assert_eq!(chain.check_validity(999), Err(ChainError::NotYetValid));
        assert_eq!(chain.check_validity(1000), Ok(()));
        assert_eq!(chain.check_validity(1100), Ok(()));
        assert_eq!(chain.check_validity(1101), Err(ChainError::Expired));
    }
}

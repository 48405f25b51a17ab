pub mod attestation;
pub mod bundle;
pub mod bytes;
pub mod canonical;
pub mod clock;
pub mod economics;
pub mod evaluation;
pub mod package;
pub mod portal;
pub mod runner;
pub mod verifier;

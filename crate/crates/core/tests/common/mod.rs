#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use attestrep::attestation::{AttestationProvider, ProviderConfig};
use attestrep::clock::FixedClock;

pub const T0: u64 = 1_700_000_000;

pub fn fixture_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn write_tree(root: &Path, files: &BTreeMap<String, Vec<u8>>) {
    for (rel, content) in files {
        let path = root.join(rel);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, content).unwrap();
    }
}

/// A package whose entrypoint is the given shell script.
pub fn script_package(script: &str, outputs: &[&str]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = String::from("entrypoint = run.sh\n");
    for o in outputs {
        manifest.push_str(&format!("output = {o}\n"));
    }
    fs::write(dir.path().join("attestrep.manifest"), manifest).unwrap();
    fs::write(dir.path().join("run.sh"), script).unwrap();
    dir
}

pub fn provider(seed: u8, clock: Arc<FixedClock>) -> Arc<AttestationProvider> {
    let mut cfg = ProviderConfig::simulated(vec![seed; 32]);
    cfg.valid_from = Some(T0);
    Arc::new(AttestationProvider::init_with_clock(cfg, clock).unwrap())
}

mod common;

use std::fs;
use std::sync::Arc;

use attestrep::clock::FixedClock;
use attestrep::package::pack_archive;
use attestrep::portal::{audit_check, AuditEvent, AuditStatus, Portal, PortalConfig, SubmissionState};
use attestrep::verifier::{RejectReason, Verdict};
use common::*;

fn open(dir: &std::path::Path, clock: Arc<FixedClock>) -> Portal {
    let p = provider(5, clock.clone());
    let mut config = PortalConfig::new(dir, vec![p.root_public_key()]);
    config.duplicate_window = 0;
    Portal::open(config, p, clock).unwrap()
}

#[test]
fn pack_submit_process_verify() {
    let store = tempfile::tempdir().unwrap();
    let clock = Arc::new(FixedClock::new(T0));
    let portal = open(store.path(), clock.clone());

    let archive = pack_archive(&fixture_dir("answer42")).unwrap();
    let sub = portal.submit(&archive, "author").unwrap();
    clock.advance(3);
    let proved = portal.process(&sub.submission_id).unwrap();
    assert_eq!(proved.state, SubmissionState::Proved);
    let token = proved.token.unwrap();

    clock.advance(3600);
    let served = portal.public_verify(&token).unwrap();
    assert_eq!(served.verdict, Verdict::Accept);
    assert_eq!(served.bundle, portal.bundle_bytes(&token).unwrap());

    let entries = portal.audit_entries(0).unwrap();
    let kinds: Vec<String> = entries
        .iter()
        .map(|e| match e.event().unwrap() {
            AuditEvent::Submission { to, .. } => to,
            AuditEvent::ProofArchived { .. } => "archived".into(),
            AuditEvent::VerificationServed { verdict, .. } => verdict,
        })
        .collect();
    assert_eq!(kinds, ["Received", "Running", "archived", "Proved", "accept"]);

    let blob = portal.blobs().path_of(&sub.archive_blob);
    let mut bytes = fs::read(&blob).unwrap();
    let last = bytes.len() - 1;
    bytes[last / 2] ^= 0x80;
    fs::write(&blob, bytes).unwrap();
    let served = portal.public_verify(&token).unwrap();
    assert_eq!(served.verdict, Verdict::reject(RejectReason::DigestMismatch));
    assert_eq!(portal.audit_check().unwrap(), AuditStatus::Ok);
}

#[test]
fn parallel_jobs_keep_one_chain() {
    let store = tempfile::tempdir().unwrap();
    let clock = Arc::new(FixedClock::new(T0));
    let portal = open(store.path(), clock);
    let ok = pack_archive(&fixture_dir("answer42")).unwrap();
    let bad = pack_archive(&fixture_dir("fails")).unwrap();

    let ids: Vec<_> = (0..12)
        .map(|i| {
            let archive = if i % 3 == 0 { &bad } else { &ok };
            portal.submit(archive, &format!("author-{i}")).unwrap().submission_id
        })
        .collect();

    // every id is processed by two racing threads; exactly one wins
    let wins = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|s| {
        for chunk in ids.chunks(3) {
            for _ in 0..2 {
                let (portal, wins) = (&portal, &wins);
                s.spawn(move || {
                    for id in chunk {
                        if portal.process(id).is_ok() {
                            wins.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        }
                    }
                });
            }
        }
    });
    assert_eq!(wins.into_inner(), 12);

    let mut proved = 0;
    for id in &ids {
        let s = portal.get(id).unwrap();
        assert!(s.state.is_terminal());
        if let Some(token) = s.token {
            proved += 1;
            assert!(portal.public_verify(&token).unwrap().verdict.is_accept());
        }
    }
    assert_eq!(proved, 8);
    // 12 received + 12 running + 12 terminal + 8 archived + 8 served
    let entries = portal.audit_entries(0).unwrap();
    assert_eq!(entries.len(), 52);
    assert_eq!(audit_check(&entries), AuditStatus::Ok);
}

#[test]
fn restart_sees_only_committed_states() {
    let store = tempfile::tempdir().unwrap();
    let clock = Arc::new(FixedClock::new(T0));
    let archive = pack_archive(&fixture_dir("answer42")).unwrap();
    let (id, token) = {
        let portal = open(store.path(), clock.clone());
        let sub = portal.submit(&archive, "a").unwrap();
        let done = portal.process(&sub.submission_id).unwrap();
        (sub.submission_id, done.token.unwrap())
    };
    for entry in fs::read_dir(store.path().join("submissions")).unwrap() {
        let text = fs::read_to_string(entry.unwrap().path()).unwrap();
        assert!(!text.contains("Running"));
    }
    let portal = open(store.path(), clock);
    assert_eq!(portal.get(&id).unwrap().state, SubmissionState::Proved);
    assert!(portal.public_verify(&token).unwrap().verdict.is_accept());
    assert_eq!(portal.audit_log().len(), 5);
}

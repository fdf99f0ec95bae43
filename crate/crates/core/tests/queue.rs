use std::collections::HashMap;
use std::fs;
use std::sync::{Arc, Mutex};
use std::thread;

use beamforge::workqueue::{BeamStatus, QueueError, SharedDir, LOCK_FILE};

fn fresh(n: usize) -> (tempfile::TempDir, SharedDir) {
    let dir = tempfile::tempdir().unwrap();
    let q = SharedDir::new(dir.path());
    let beams: Vec<(String, String)> = (0..n).map(|i| (format!("B{i:04}"), format!("data/B{i:04}.fil"))).collect();
    q.init_db(&beams, false).unwrap();
    (dir, q)
}

#[test]
fn concurrent_workers_claim_each_beam_once() {
    let (_dir, q) = fresh(120);
    let seen: Arc<Mutex<HashMap<String, usize>>> = Arc::default();
    thread::scope(|s| {
        for w in 0..8 {
            let q = q.clone();
            let seen = seen.clone();
            s.spawn(move || {
                let id = format!("w{w}");
                loop {
                    match q.claim_next(&id) {
                        Ok(rec) => {
                            *seen.lock().unwrap().entry(rec.beam_id.clone()).or_default() += 1;
                            q.mark_done(&id, &rec.beam_id, "r").unwrap();
                        }
                        Err(QueueError::NoWork) => break,
                        Err(e) => panic!("{e}"),
                    }
                }
            });
        }
    });
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 120);
    assert!(seen.values().all(|&n| n == 1));
    let db = q.read_db().unwrap();
    assert_eq!(db.count(BeamStatus::Done), 120);
    let tr = q.read_transitions().unwrap();
    assert_eq!(tr.len(), 240);
    assert!(tr.windows(2).all(|w| w[0].version < w[1].version));
}

#[test]
fn dead_claims_return_and_late_completion_is_refused() {
    let (_dir, q) = fresh(3);
    let rec = q.claim_next("ghost").unwrap();
    let now = beamforge::fsutil::epoch_now();
    assert_eq!(q.requeue_stale_at(600, Some(now + 10)).unwrap(), 0);
    assert_eq!(q.requeue_stale_at(600, Some(now + 3600)).unwrap(), 1);
    let again = q.claim_next("alive").unwrap();
    assert_eq!(again.beam_id, rec.beam_id);
    assert_eq!(again.attempt_count, rec.attempt_count + 1);
    assert!(matches!(q.mark_done("ghost", &rec.beam_id, "r"), Err(QueueError::NotClaimant { .. })));
    q.mark_done("alive", &rec.beam_id, "r").unwrap();
}

#[test]
fn stale_lock_file_is_broken() {
    let (dir, mut q) = fresh(2);
    // A lock left by a process that died long ago.
    fs::write(dir.path().join(LOCK_FILE), "dead 1 x\n").unwrap();
    q.lock_stale_secs = 5;
    q.lock_timeout = std::time::Duration::from_secs(10);
    let rec = q.claim_next("c1").unwrap();
    assert_eq!(rec.beam_id, "B0000");
    assert!(!dir.path().join(LOCK_FILE).exists());
}

#[test]
fn live_lock_blocks_until_timeout() {
    let (_dir, mut q) = fresh(1);
    let token = q.acquire_lock("holder", std::time::Duration::from_secs(1)).unwrap();
    q.lock_timeout = std::time::Duration::from_millis(200);
    assert!(matches!(q.claim_next("c1"), Err(QueueError::LockTimeout { .. })));
    q.release_lock(token).unwrap();
    assert!(q.claim_next("c1").is_ok());
}

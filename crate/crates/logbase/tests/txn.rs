mod common;

use std::collections::HashSet;
use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use common::anomalies;
use logbase::schema::TableSchema;
use logbase::{ConflictReason, Engine, EngineConfig, Error, TxnStatus};

fn engine(dir: &std::path::Path) -> Engine {
    let e = Engine::open(dir, EngineConfig::default()).unwrap();
    e.create_table(TableSchema::single_group("t", "g"), &[b"m".to_vec()]).unwrap();
    e
}

#[test]
fn anomaly_histories_classify_as_snapshot_isolation() {
    for h in &anomalies::HISTORIES {
        assert_eq!(anomalies::run(h), h.permitted, "{}", h.name);
    }
}

#[test]
fn own_writes_are_visible_and_nothing_is_logged_before_commit() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    let appends = e.store().stats().appends;
    let mut t = e.begin();
    assert_eq!(e.txn_read(&mut t, "t", b"a", "g").unwrap(), None);
    e.txn_write(&mut t, "t", b"a", "g", b"1").unwrap();
    e.txn_write(&mut t, "t", b"a", "g", b"2").unwrap();
    assert_eq!(e.txn_read(&mut t, "t", b"a", "g").unwrap().unwrap(), b"2");
    assert_eq!(e.store().stats().appends, appends);
    assert_eq!(e.get("t", b"a", "g").unwrap(), None);
    let ts = e.commit(&mut t).unwrap();
    assert_eq!(t.status(), TxnStatus::Committed);
    assert_eq!(e.get("t", b"a", "g").unwrap(), Some((b"2".to_vec(), ts)));
    assert!(matches!(e.commit(&mut t), Err(Error::TxnNotActive(_))));
}

#[test]
fn visibility_follows_timestamps() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    let before = e.begin();
    let mut w = e.begin();
    e.txn_write(&mut w, "t", b"k", "g", b"v").unwrap();
    let cts = e.commit(&mut w).unwrap();
    let mut after = e.begin();
    assert!(before.snapshot_ts() < cts && cts < after.snapshot_ts());
    let mut before = before;
    assert_eq!(e.txn_read(&mut before, "t", b"k", "g").unwrap(), None);
    assert_eq!(e.txn_read(&mut after, "t", b"k", "g").unwrap().unwrap(), b"v");
}

#[test]
fn abort_discards_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    e.put("t", b"k", "g", b"old").unwrap();
    let mut t = e.begin();
    e.txn_write(&mut t, "t", b"k", "g", b"new").unwrap();
    e.txn_delete(&mut t, "t", b"z", "g").unwrap();
    e.abort(&mut t);
    e.abort(&mut t);
    assert_eq!(t.status(), TxnStatus::Aborted);
    assert_eq!(e.get("t", b"k", "g").unwrap().unwrap().0, b"old");
    assert!(e.txn_write(&mut t, "t", b"k", "g", b"x").is_err());
}

#[test]
fn deletes_in_transactions() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    e.put("t", b"a", "g", b"1").unwrap();
    let mut t = e.begin();
    e.txn_delete(&mut t, "t", b"a", "g").unwrap();
    e.txn_delete(&mut t, "t", b"never", "g").unwrap();
    assert_eq!(e.txn_read(&mut t, "t", b"a", "g").unwrap(), None);
    e.commit(&mut t).unwrap();
    assert_eq!(e.get("t", b"a", "g").unwrap(), None);
}

#[test]
fn range_reads_see_own_writes() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    for k in ["a", "b", "n", "o"] {
        e.put("t", k.as_bytes(), "g", k.as_bytes()).unwrap();
    }
    let mut t = e.begin();
    e.txn_write(&mut t, "t", b"c", "g", b"C").unwrap();
    e.txn_delete(&mut t, "t", b"n", "g").unwrap();
    let rows = e.txn_read_range(&mut t, "t", "g", b"b", Some(b"z")).unwrap();
    let keys: Vec<&[u8]> = rows.iter().map(|(k, _)| k.as_slice()).collect();
    assert_eq!(keys, vec![&b"b"[..], b"c", b"o"]);
}

#[test]
fn read_only_transactions_always_commit() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    let mut r = e.begin();
    e.txn_read_range(&mut r, "t", "g", b"", None).unwrap();
    e.put("t", b"q", "g", b"1").unwrap();
    assert!(e.commit(&mut r).is_ok());
}

#[test]
fn first_committer_wins_under_threads() {
    let dir = tempfile::tempdir().unwrap();
    let e = Arc::new(engine(dir.path()));
    e.put("t", b"hot", "g", b"0").unwrap();
    for _ in 0..20 {
        let barrier = Arc::new(Barrier::new(2));
        let handles: Vec<_> = (0..2)
            .map(|i| {
                let e = e.clone();
                let barrier = barrier.clone();
                std::thread::spawn(move || {
                    let mut t = e.begin();
                    e.txn_read(&mut t, "t", b"hot", "g").unwrap();
                    barrier.wait();
                    e.txn_write(&mut t, "t", b"hot", "g", &[i]).unwrap();
                    e.commit(&mut t).is_ok()
                })
            })
            .collect();
        let wins: usize = handles.into_iter().map(|h| usize::from(h.join().unwrap())).sum();
        assert!(wins <= 1);
    }
}

#[test]
fn concurrent_transfers_conserve_money_and_terminate() {
    let dir = tempfile::tempdir().unwrap();
    let e = Arc::new(engine(dir.path()));
    let accounts: Vec<Vec<u8>> = (0..8u8).map(|i| vec![b'a' + i * 2]).collect();
    for a in &accounts {
        e.put("t", a, "g", &100i64.to_le_bytes()).unwrap();
    }
    let deadline = Instant::now() + Duration::from_secs(30);
    let handles: Vec<_> = (0..8u64)
        .map(|seed| {
            let e = e.clone();
            let accounts = accounts.clone();
            std::thread::spawn(move || {
                let mut commits = 0;
                let mut x = seed * 7 + 1;
                for _ in 0..200 {
                    x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let from = &accounts[(x >> 33) as usize % accounts.len()];
                    let to = &accounts[(x >> 40) as usize % accounts.len()];
                    if from == to {
                        continue;
                    }
                    let mut t = e.begin();
                    let get = |e: &Engine, t: &mut logbase::Transaction, k: &[u8]| {
                        i64::from_le_bytes(e.txn_read(t, "t", k, "g").unwrap().unwrap().try_into().unwrap())
                    };
                    let (a, b) = (get(&e, &mut t, from), get(&e, &mut t, to));
                    e.txn_write(&mut t, "t", from, "g", &(a - 1).to_le_bytes()).unwrap();
                    e.txn_write(&mut t, "t", to, "g", &(b + 1).to_le_bytes()).unwrap();
                    match e.commit(&mut t) {
                        Ok(_) => commits += 1,
                        Err(Error::Conflict { .. }) => {}
                        Err(other) => panic!("{other}"),
                    }
                }
                commits
            })
        })
        .collect();
    let commits: u32 = handles.into_iter().map(|h| h.join().unwrap()).sum();
    assert!(Instant::now() < deadline, "stress run took too long");
    assert!(commits > 0);
    let total: i64 = accounts
        .iter()
        .map(|a| i64::from_le_bytes(e.get("t", a, "g").unwrap().unwrap().0.try_into().unwrap()))
        .sum();
    assert_eq!(total, 800);
}

#[test]
fn commit_timestamps_are_unique_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let e = Arc::new(engine(dir.path()));
    let handles: Vec<_> = (0..8u8)
        .map(|i| {
            let e = e.clone();
            std::thread::spawn(move || {
                (0..50u8)
                    .map(|j| {
                        if j % 2 == 0 {
                            e.begin().snapshot_ts()
                        } else {
                            e.put("t", &[i, j], "g", b"v").unwrap()
                        }
                    })
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    let all: Vec<u64> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    let unique: HashSet<u64> = all.iter().copied().collect();
    assert_eq!(unique.len(), all.len());
}

#[test]
fn version_change_reports_reason() {
    let dir = tempfile::tempdir().unwrap();
    let e = Engine::open(dir.path(), EngineConfig::default()).unwrap();
    e.create_table(TableSchema::single_group("t", "g"), &[]).unwrap();
    let mut t1 = e.begin();
    e.txn_read(&mut t1, "t", b"k", "g").unwrap();
    e.put("t", b"k", "g", b"v").unwrap();
    e.txn_write(&mut t1, "t", b"k", "g", b"w").unwrap();
    match e.commit(&mut t1) {
        Err(Error::Conflict { reason, .. }) => assert_eq!(reason, ConflictReason::VersionChanged),
        other => panic!("{other:?}"),
    }
}

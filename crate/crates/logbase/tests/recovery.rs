use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use logbase::schema::TableSchema;
use logbase::{Engine, EngineConfig, Error, RecoveryFault};
use logbase_core::{LogEntry, LogKey, RowKey};

fn config() -> EngineConfig {
    EngineConfig { checkpoint_on_recovery: false, ..EngineConfig::default() }
}

fn engine(dir: &Path) -> Engine {
    let e = Engine::open(dir, config()).unwrap();
    e.create_table(TableSchema::single_group("t", "g"), &[]).unwrap();
    e
}

fn log_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|f| f.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "log"))
        .collect();
    v.sort();
    v
}

#[test]
fn torn_tail_is_dropped_and_earlier_commits_survive() {
    let dir = tempfile::tempdir().unwrap();
    {
        let e = engine(dir.path());
        e.put("t", b"a", "g", b"1").unwrap();
        e.put("t", b"b", "g", b"2").unwrap();
    }
    let log = log_files(dir.path()).pop().unwrap();
    let len = std::fs::metadata(&log).unwrap().len();
    // Cut into the last commit record.
    OpenOptions::new().write(true).open(&log).unwrap().set_len(len - 3).unwrap();
    let e = Engine::open(dir.path(), config()).unwrap();
    assert!(e.recovery_report().torn_tail.is_some());
    assert_eq!(e.get("t", b"a", "g").unwrap().unwrap().0, b"1");
    assert_eq!(e.get("t", b"b", "g").unwrap(), None);
    assert_eq!(e.recovery_report().uncommitted, 1);
    // New writes land where the torn bytes were.
    e.put("t", b"c", "g", b"3").unwrap();
    drop(e);
    let e = Engine::open(dir.path(), config()).unwrap();
    assert_eq!(e.recovery_report().torn_tail, None);
    assert_eq!(e.get("t", b"c", "g").unwrap().unwrap().0, b"3");
}

#[test]
fn writes_without_commit_record_stay_invisible() {
    let dir = tempfile::tempdir().unwrap();
    {
        let e = engine(dir.path());
        e.put("t", b"a", "g", b"1").unwrap();
        let orphan = LogEntry::Write {
            log_key: LogKey { lsn: 100, table: "t".into(), tablet: 0 },
            row_key: RowKey { primary_key: b"a".to_vec(), column_group: "g".into(), write_ts: 1000 },
            txn_id: 9999,
            value: b"ghost".to_vec(),
        };
        e.store().append(&orphan.encode()).unwrap();
        e.store().sync().unwrap();
    }
    let e = Engine::open(dir.path(), config()).unwrap();
    assert_eq!(e.get("t", b"a", "g").unwrap().unwrap().0, b"1");
    assert_eq!(e.recovery_report().uncommitted, 1);
}

#[test]
fn crash_during_recovery_then_recover_again() {
    let dir = tempfile::tempdir().unwrap();
    {
        let e = engine(dir.path());
        for i in 0..30u8 {
            e.put("t", &[i], "g", &[i]).unwrap();
        }
        e.checkpoint().unwrap();
        for i in 0..30u8 {
            e.put("t", &[i], "g", &[i, i]).unwrap();
        }
        e.delete("t", &[5], "g").unwrap();
    }
    for step in 0..3 {
        for partial in [None, Some(7)] {
            let copy = tempfile::tempdir().unwrap();
            for f in std::fs::read_dir(dir.path()).unwrap() {
                let f = f.unwrap();
                std::fs::copy(f.path(), copy.path().join(f.file_name())).unwrap();
            }
            let fault = RecoveryFault { crash_at_step: step, partial_bytes: partial };
            assert!(matches!(
                Engine::open_with_fault(copy.path(), config(), Some(fault)),
                Err(Error::InjectedFault(_))
            ));
            let e = Engine::open(copy.path(), config()).unwrap();
            for i in 0..30u8 {
                let got = e.get("t", &[i], "g").unwrap().map(|(v, _)| v);
                let want = (i != 5).then(|| vec![i, i]);
                assert_eq!(got, want, "step {step} partial {partial:?} key {i}");
            }
        }
    }
}

#[test]
fn mid_log_corruption_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    {
        let e = engine(dir.path());
        for i in 0..10u8 {
            e.put("t", &[i], "g", &[i; 50]).unwrap();
        }
    }
    let log = log_files(dir.path()).pop().unwrap();
    let mut bytes = std::fs::read(&log).unwrap();
    bytes[40] ^= 0x55;
    std::fs::write(&log, bytes).unwrap();
    assert!(matches!(Engine::open(dir.path(), config()), Err(Error::ChecksumMismatch { .. })));
}

#[test]
fn empty_directory_and_clean_shutdown() {
    let dir = tempfile::tempdir().unwrap();
    {
        let e = Engine::open(dir.path(), config()).unwrap();
        assert_eq!(e.recovery_report().redo_scanned, 0);
        e.create_table(TableSchema::single_group("t", "g"), &[]).unwrap();
        e.put("t", b"k", "g", b"v").unwrap();
        e.close().unwrap();
    }
    let e = Engine::open(dir.path(), config()).unwrap();
    assert_eq!(e.get("t", b"k", "g").unwrap().unwrap().0, b"v");
}

#[test]
fn recovery_checkpoint_makes_the_next_restart_cheap() {
    let dir = tempfile::tempdir().unwrap();
    {
        let e = engine(dir.path());
        for i in 0..20u8 {
            e.put("t", &[i], "g", &[i]).unwrap();
        }
    }
    let cfg = EngineConfig { checkpoint_on_recovery: true, ..EngineConfig::default() };
    {
        let e = Engine::open(dir.path(), cfg.clone()).unwrap();
        assert!(e.recovery_report().checkpoint_written);
        assert_eq!(e.recovery_report().redo_applied, 20);
    }
    let e = Engine::open(dir.path(), cfg).unwrap();
    assert_eq!(e.recovery_report().redo_scanned, 0);
    assert!(!e.recovery_report().checkpoint_written);
    assert_eq!(e.get("t", &[19], "g").unwrap().unwrap().0, vec![19]);
}

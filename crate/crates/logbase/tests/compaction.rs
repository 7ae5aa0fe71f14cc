use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use logbase::schema::TableSchema;
use logbase::{CompactionConfig, Engine, EngineConfig, Error, Retention, StoreConfig};
use logbase_core::SegmentKind;

fn config() -> EngineConfig {
    EngineConfig {
        store: StoreConfig::default().with_segment_capacity(4096),
        buffer_capacity: 0,
        checkpoint_on_recovery: false,
        ..EngineConfig::default()
    }
}

fn engine(dir: &std::path::Path) -> Engine {
    let e = Engine::open(dir, config()).unwrap();
    e.create_table(TableSchema::with_groups("t", &["a", "b"]), &[b"k5".to_vec()]).unwrap();
    e
}

fn segments(e: &Engine, kind: SegmentKind) -> usize {
    e.store().list_segments().iter().filter(|s| s.kind == kind).count()
}

#[test]
fn latest_only_keeps_one_version_and_drops_deleted_keys() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    for v in [b"1", b"2", b"3"] {
        e.put("t", b"k1", "a", v).unwrap();
    }
    e.put("t", b"k2", "a", b"x").unwrap();
    e.delete("t", b"k2", "a").unwrap();
    let report = e.compact(CompactionConfig::default()).unwrap();
    assert_eq!(report.versions_out, 1);
    assert_eq!(e.get("t", b"k1", "a").unwrap().unwrap().0, b"3");
    assert_eq!(e.get("t", b"k2", "a").unwrap(), None);
    let snap = e.snapshot();
    assert_eq!(e.full_scan("t", "a", snap).unwrap(), vec![(b"k1".to_vec(), b"3".to_vec())]);
    assert_eq!(segments(&e, SegmentKind::Sorted), 1);
}

#[test]
fn keep_since_preserves_history_after_watermark() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    let t1 = e.put("t", b"k", "a", b"1").unwrap();
    let t2 = e.put("t", b"k", "a", b"2").unwrap();
    let t3 = e.put("t", b"k", "a", b"3").unwrap();
    e.compact(CompactionConfig { retention: Retention::KeepSince(t2) }).unwrap();
    assert_eq!(e.get_as_of("t", b"k", "a", t2).unwrap().unwrap().0, b"2");
    assert_eq!(e.get_as_of("t", b"k", "a", t3).unwrap().unwrap().0, b"3");
    assert_eq!(e.get_as_of("t", b"k", "a", t1).unwrap(), None);
}

#[test]
fn double_swap_is_rejected_and_concurrent_jobs_refused() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    e.put("t", b"k", "a", b"1").unwrap();
    let mut job = e.begin_compaction(CompactionConfig::default()).unwrap();
    assert!(matches!(e.begin_compaction(CompactionConfig::default()), Err(Error::CompactionInProgress)));
    job.swap().unwrap();
    assert!(matches!(job.swap(), Err(Error::AlreadySwapped)));
}

#[test]
fn dropped_job_discards_output() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    e.put("t", b"k", "a", b"1").unwrap();
    drop(e.begin_compaction(CompactionConfig::default()).unwrap());
    assert_eq!(segments(&e, SegmentKind::Sorted), 0);
    assert!(!std::fs::read_dir(dir.path()).unwrap().any(|f| f.unwrap().file_name().to_string_lossy().ends_with(".meta")));
    assert_eq!(e.get("t", b"k", "a").unwrap().unwrap().0, b"1");
}

#[test]
fn writes_during_compaction_survive_the_swap() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    e.put("t", b"k1", "a", b"old").unwrap();
    let mut job = e.begin_compaction(CompactionConfig::default()).unwrap();
    e.put("t", b"k1", "a", b"new").unwrap();
    e.put("t", b"k7", "b", b"late").unwrap();
    job.swap().unwrap();
    drop(job);
    assert_eq!(e.get("t", b"k1", "a").unwrap().unwrap().0, b"new");
    assert_eq!(e.get("t", b"k7", "b").unwrap().unwrap().0, b"late");
    drop(e);
    let e = Engine::open(dir.path(), config()).unwrap();
    assert_eq!(e.recovery_report().redo_scanned, 0);
    assert_eq!(e.get("t", b"k1", "a").unwrap().unwrap().0, b"new");
    assert_eq!(e.get("t", b"k7", "b").unwrap().unwrap().0, b"late");
}

#[test]
fn crash_before_swap_recovers_old_state() {
    for with_checkpoint in [false, true] {
        let dir = tempfile::tempdir().unwrap();
        let (t1, t2);
        {
            let e = engine(dir.path());
            t1 = e.put("t", b"k", "a", b"1").unwrap();
            if with_checkpoint {
                e.checkpoint().unwrap();
            }
            t2 = e.put("t", b"k", "a", b"2").unwrap();
            // Simulate a crash between output completion and swap.
            std::mem::forget(e.begin_compaction(CompactionConfig::default()).unwrap());
        }
        let e = Engine::open(dir.path(), config()).unwrap();
        assert_eq!(e.get_as_of("t", b"k", "a", t1).unwrap().unwrap().0, b"1", "checkpoint={with_checkpoint}");
        assert_eq!(e.get_as_of("t", b"k", "a", t2).unwrap().unwrap().0, b"2");
        assert_eq!(segments(&e, SegmentKind::Sorted), 0);
    }
}

#[test]
fn recovery_after_swap_uses_sorted_segments() {
    let dir = tempfile::tempdir().unwrap();
    {
        let e = engine(dir.path());
        for i in 0..200u32 {
            e.put("t", format!("k{i:03}").as_bytes(), "a", &[1; 64]).unwrap();
        }
        e.compact(CompactionConfig::default()).unwrap();
        e.put("t", b"k000", "a", b"after").unwrap();
    }
    // Without any checkpoint the meta file alone must suffice.
    for f in std::fs::read_dir(dir.path()).unwrap() {
        let f = f.unwrap();
        let name = f.file_name().to_string_lossy().into_owned();
        if name.ends_with(".ckpt") || name == "CURRENT" || name.ends_with(".idx") {
            std::fs::remove_file(f.path()).unwrap();
        }
    }
    let e = Engine::open(dir.path(), config()).unwrap();
    assert_eq!(e.recovery_report().checkpoint_seq, None);
    assert_eq!(e.get("t", b"k000", "a").unwrap().unwrap().0, b"after");
    assert_eq!(e.get("t", b"k150", "a").unwrap().unwrap().0, vec![1; 64]);
    assert_eq!(e.range_scan("t", "a", b"", None, e.snapshot()).unwrap().len(), 200);
}

#[test]
fn reads_across_a_concurrent_swap_never_miss() {
    let dir = tempfile::tempdir().unwrap();
    let e = Arc::new(engine(dir.path()));
    let keys: Vec<Vec<u8>> = (0..100u32).map(|i| format!("k{i:03}").into_bytes()).collect();
    for k in &keys {
        e.put("t", k, "a", k).unwrap();
        e.put("t", k, "a", k).unwrap();
    }
    let stop = Arc::new(AtomicBool::new(false));
    let readers: Vec<_> = (0..4)
        .map(|_| {
            let (e, stop, keys) = (e.clone(), stop.clone(), keys.clone());
            std::thread::spawn(move || {
                let mut n = 0u64;
                while !stop.load(Ordering::Acquire) {
                    for k in &keys {
                        assert_eq!(&e.get("t", k, "a").unwrap().unwrap().0, k);
                        n += 1;
                    }
                }
                n
            })
        })
        .collect();
    for _ in 0..3 {
        e.compact(CompactionConfig::default()).unwrap();
    }
    stop.store(true, Ordering::Release);
    for r in readers {
        assert!(r.join().unwrap() > 0);
    }
}

#[test]
fn reclaim_estimate_matches_report() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    for i in 0..50u32 {
        e.put("t", &i.to_be_bytes(), "a", &[0; 40]).unwrap();
    }
    assert!(e.estimate_reclaim(Retention::LatestOnly) > 0, "commit records are always reclaimable");
    for i in 0..50u32 {
        e.put("t", &i.to_be_bytes(), "a", &[1; 40]).unwrap();
    }
    let estimate = e.estimate_reclaim(Retention::LatestOnly);
    let report = e.compact(CompactionConfig::default()).unwrap();
    assert_eq!(estimate, report.reclaimed_bytes);
    assert!(report.output_bytes < report.input_bytes);
}

#[test]
fn sorted_scan_reads_each_segment_forward() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    let mut expect = HashMap::new();
    for round in 0..3u8 {
        for i in (0..300u32).rev() {
            let key = format!("k{:04}", (i * 7919) % 300).into_bytes();
            e.put("t", &key, "a", &[round; 30]).unwrap();
            expect.insert(key, vec![round; 30]);
        }
    }
    e.compact(CompactionConfig::default()).unwrap();
    e.store().trace_reads(true);
    let rows = e.range_scan("t", "a", b"", None, e.snapshot()).unwrap();
    let trace = e.store().take_read_trace();
    assert_eq!(rows.len(), expect.len());
    let mut last = HashMap::new();
    for addr in trace {
        assert_eq!(addr.segment.kind, SegmentKind::Sorted);
        if let Some(prev) = last.insert(addr.segment, addr.offset) {
            assert!(addr.offset > prev);
        }
    }
}

//! Crash-point injection: run a transactional workload while keeping a
//! shadow copy of the committed state, then cut the log at chosen byte
//! positions, recover, and compare.
//!
//! A crash at byte `p` of the concatenated log keeps exactly the commits
//! whose records end at or before `p`, and the checkpoints that had fully
//! completed by then.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use logbase_core::checkpoint;
use logbase_core::Timestamp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{Engine, EngineConfig};
use crate::error::{Error, Result};
use crate::recovery::{parse_checkpoint_name, RecoveryFault, CURRENT_FILE};
use crate::schema::TableSchema;
use crate::store::StoreConfig;

const TABLE: &str = "crash";
const GROUP: &str = "v";

#[derive(Debug, Clone)]
pub struct CrashWorkload {
    pub seed: u64,
    /// Total reads, writes and deletes across all transactions.
    pub ops: usize,
    pub keys: usize,
    pub max_txn_ops: usize,
    pub delete_ratio: f64,
    pub value_len: usize,
    pub checkpoint_every_txns: usize,
    pub segment_capacity: u64,
    pub flush_threshold: u64,
}

impl Default for CrashWorkload {
    fn default() -> Self {
        CrashWorkload {
            seed: 7,
            ops: 10_000,
            keys: 500,
            max_txn_ops: 5,
            delete_ratio: 0.15,
            value_len: 24,
            checkpoint_every_txns: 400,
            segment_capacity: 64 * 1024,
            flush_threshold: 300,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrashSchedule {
    pub seed: u64,
    pub points: usize,
    /// Every n-th trial also crashes while writing the recovery checkpoint.
    pub nested_every: usize,
}

impl Default for CrashSchedule {
    fn default() -> Self {
        CrashSchedule { seed: 11, points: 100, nested_every: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialOutcome {
    /// Log bytes that survived the crash.
    pub point: u64,
    pub nested: Option<RecoveryFault>,
    /// Commits the oracle expects to survive.
    pub durable_txns: usize,
    pub checkpoint_seq: Option<u64>,
    /// Keys whose recovered value differs from the oracle.
    pub mismatches: usize,
    /// Transactions with some but not all of their writes visible.
    pub atomicity_violations: usize,
}

impl TrialOutcome {
    pub fn passed(&self) -> bool {
        self.mismatches == 0 && self.atomicity_violations == 0
    }
}

#[derive(Debug, Clone)]
pub struct CrashReport {
    pub log_bytes: u64,
    pub commits: usize,
    pub checkpoints: usize,
    pub trials: Vec<TrialOutcome>,
    pub elapsed: Duration,
}

impl CrashReport {
    pub fn passed(&self) -> usize {
        self.trials.iter().filter(|t| t.passed()).count()
    }

    pub fn nested(&self) -> usize {
        self.trials.iter().filter(|t| t.nested.is_some()).count()
    }
}

#[derive(Debug, Clone)]
struct CommittedTxn {
    ts: Timestamp,
    /// Global log offset just past the commit record.
    end: u64,
    writes: BTreeMap<usize, Option<Vec<u8>>>,
}

/// What the workload left behind, plus the oracle's view of it.
#[derive(Debug)]
pub struct RecordedRun {
    dir: PathBuf,
    keys: usize,
    commits: Vec<CommittedTxn>,
    /// (checkpoint seq, global log offset when it completed)
    checkpoints: Vec<(u64, u64)>,
    log_bytes: u64,
}

impl RecordedRun {
    pub fn log_bytes(&self) -> u64 {
        self.log_bytes
    }

    pub fn commits(&self) -> usize {
        self.commits.len()
    }

    /// Committed value of every key after the commits that end by `point`.
    fn oracle(&self, point: u64) -> Vec<Option<Vec<u8>>> {
        let mut state = vec![None; self.keys];
        for c in self.commits.iter().take_while(|c| c.end <= point) {
            for (&k, v) in &c.writes {
                state[k] = v.clone();
            }
        }
        state
    }
}

fn key(i: usize) -> Vec<u8> {
    format!("key{i:06}").into_bytes()
}

fn tagged_value(txn: usize, k: usize, len: usize) -> Vec<u8> {
    let mut v = format!("t{txn}:k{k}:").into_bytes();
    v.resize(len.max(v.len()), b'.');
    v
}

/// Engine settings used for both the workload and every recovery.
pub fn crash_config(workload: &CrashWorkload) -> EngineConfig {
    EngineConfig {
        store: StoreConfig::default().with_segment_capacity(workload.segment_capacity),
        flush_threshold: workload.flush_threshold,
        // Keep every checkpoint so a cut can fall back to whichever ones
        // had completed before it.
        checkpoints_kept: usize::MAX,
        checkpoint_on_recovery: true,
        ..EngineConfig::default()
    }
}

/// Runs `workload` single-threaded in `dir`, recording each commit.
pub fn record_workload(dir: &Path, workload: &CrashWorkload) -> Result<RecordedRun> {
    let config = crash_config(workload);
    let engine = Engine::open(dir, config)?;
    let mid = key(workload.keys / 2);
    engine.create_table(TableSchema::single_group(TABLE, GROUP), &[mid])?;
    let mut rng = ChaCha8Rng::seed_from_u64(workload.seed);
    let mut present = vec![false; workload.keys];
    let mut run = RecordedRun {
        dir: dir.to_path_buf(),
        keys: workload.keys,
        commits: Vec::new(),
        checkpoints: Vec::new(),
        log_bytes: 0,
    };
    let end_offset = |e: &Engine| e.store().global_offset(e.store().end_position());

    let mut ops = 0;
    let mut txn_no = 0;
    while ops < workload.ops {
        txn_no += 1;
        let mut txn = engine.begin();
        let mut writes = BTreeMap::new();
        let n = rng.random_range(1..=workload.max_txn_ops.max(1));
        for _ in 0..n {
            let k = rng.random_range(0..workload.keys);
            ops += 1;
            match rng.random_range(0..10) {
                0 => {
                    engine.txn_read(&mut txn, TABLE, &key(k), GROUP)?;
                }
                _ if rng.random_bool(workload.delete_ratio) => {
                    engine.txn_delete(&mut txn, TABLE, &key(k), GROUP)?;
                    writes.insert(k, None);
                }
                _ => {
                    let v = tagged_value(txn_no, k, workload.value_len);
                    engine.txn_write(&mut txn, TABLE, &key(k), GROUP, &v)?;
                    writes.insert(k, Some(v));
                }
            }
        }
        let ts = engine.commit(&mut txn)?;
        // Deleting an absent key writes nothing and changes nothing.
        writes.retain(|&k, v| v.is_some() || present[k]);
        for (&k, v) in &writes {
            present[k] = v.is_some();
        }
        run.commits.push(CommittedTxn { ts, end: end_offset(&engine), writes });
        if workload.checkpoint_every_txns > 0 && txn_no % workload.checkpoint_every_txns == 0 {
            let block = engine.checkpoint()?;
            run.checkpoints.push((block.seq, end_offset(&engine)));
        }
    }
    engine.close()?;
    run.log_bytes = end_offset(&engine);
    Ok(run)
}

fn log_files(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut logs = Vec::new();
    for f in fs::read_dir(dir)? {
        let path = f?.path();
        let seq = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_suffix(".log"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(seq) = seq {
            logs.push((seq, path));
        }
    }
    logs.sort();
    Ok(logs)
}

/// Copies the recorded directory and makes it look like the process died
/// with only `point` log bytes on disk.
fn stage_crash(run: &RecordedRun, point: u64, into: &Path) -> Result<()> {
    for f in fs::read_dir(&run.dir)? {
        let f = f?;
        fs::copy(f.path(), into.join(f.file_name()))?;
    }
    let mut before = 0u64;
    for (_, path) in log_files(into)? {
        let len = fs::metadata(&path)?.len();
        if before >= point && before > 0 {
            fs::remove_file(&path)?;
        } else if before + len > point {
            fs::OpenOptions::new().write(true).open(&path)?.set_len(point - before)?;
        }
        before += len;
    }
    let completed: HashSet<u64> = run.checkpoints.iter().filter(|(_, at)| *at <= point).map(|(s, _)| *s).collect();
    for f in fs::read_dir(into)? {
        let name = f?.file_name().to_string_lossy().into_owned();
        if parse_checkpoint_name(&name).is_some_and(|s| !completed.contains(&s)) {
            fs::remove_file(into.join(&name))?;
        }
    }
    let current = into.join(CURRENT_FILE);
    match completed.iter().max() {
        Some(&seq) => fs::write(&current, checkpoint::encode_pointer(&crate::recovery::checkpoint_file_name(seq)))?,
        None => crate::recovery::remove_if_present(&current)?,
    }
    Ok(())
}

fn check(run: &RecordedRun, point: u64, engine: &Engine) -> Result<(usize, usize)> {
    let expect = run.oracle(point);
    let mut mismatches = 0;
    for (k, want) in expect.iter().enumerate() {
        let got = engine.get(TABLE, &key(k), GROUP)?.map(|(v, _)| v);
        if &got != want {
            mismatches += 1;
        }
    }
    let mut scanned = engine.full_scan(TABLE, GROUP, engine.snapshot())?;
    scanned.sort();
    let expected_rows: Vec<(Vec<u8>, Vec<u8>)> =
        expect.iter().enumerate().filter_map(|(k, v)| v.clone().map(|v| (key(k), v))).collect();
    if scanned != expected_rows {
        mismatches += 1;
    }

    // A transaction is all-or-nothing at its own commit timestamp. Keys
    // later deleted by a surviving commit have lost that history.
    let durable = run.commits.iter().take_while(|c| c.end <= point).count();
    let mut violations = 0;
    for (i, c) in run.commits.iter().enumerate() {
        let mut checkable = 0;
        let mut visible = 0;
        for (&k, v) in &c.writes {
            let Some(v) = v else { continue };
            let erased = run.commits[i + 1..durable.max(i + 1)].iter().any(|later| later.writes.get(&k) == Some(&None));
            if erased {
                continue;
            }
            checkable += 1;
            if engine.get_as_of(TABLE, &key(k), GROUP, c.ts)?.is_some_and(|(got, _)| &got == v) {
                visible += 1;
            }
        }
        let expected_visible = if i < durable { checkable } else { 0 };
        if (visible != 0 && visible != checkable) || visible != expected_visible {
            violations += 1;
        }
    }
    Ok((mismatches, violations))
}

/// Cuts, recovers and checks one crash point, using `scratch` (which must
/// not exist yet) as the crashed directory. `scratch` is removed afterwards.
pub fn run_trial(
    run: &RecordedRun,
    workload: &CrashWorkload,
    point: u64,
    nested: Option<RecoveryFault>,
    scratch: &Path,
) -> Result<TrialOutcome> {
    fs::create_dir(scratch)?;
    let outcome = trial_in(run, workload, point, nested, scratch);
    fs::remove_dir_all(scratch)?;
    outcome
}

fn trial_in(run: &RecordedRun, workload: &CrashWorkload, point: u64, nested: Option<RecoveryFault>, scratch: &Path) -> Result<TrialOutcome> {
    stage_crash(run, point, scratch)?;
    let config = crash_config(workload);
    if let Some(fault) = nested {
        match Engine::open_with_fault(scratch, config.clone(), Some(fault)) {
            Ok(_) | Err(Error::InjectedFault(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let engine = Engine::open(scratch, config)?;
    let (mismatches, atomicity_violations) = check(run, point, &engine)?;
    Ok(TrialOutcome {
        point,
        nested,
        durable_txns: run.commits.iter().take_while(|c| c.end <= point).count(),
        checkpoint_seq: engine.recovery_report().checkpoint_seq,
        mismatches,
        atomicity_violations,
    })
}

/// Records the workload in `workdir/base` and runs every scheduled trial in
/// its own `workdir/trial-N`. The first two points are always an empty log
/// and the complete log.
pub fn run_crash_injection(workdir: &Path, workload: &CrashWorkload, schedule: &CrashSchedule) -> Result<CrashReport> {
    let started = Instant::now();
    let base = workdir.join("base");
    fs::create_dir_all(&base)?;
    let run = record_workload(&base, workload)?;
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let points: Vec<(usize, u64, Option<RecoveryFault>)> = (0..schedule.points)
        .map(|i| {
            let point = match i {
                0 => 0,
                1 => run.log_bytes,
                _ => rng.random_range(0..=run.log_bytes),
            };
            let nested = (schedule.nested_every > 0 && i % schedule.nested_every == schedule.nested_every - 1).then(|| {
                RecoveryFault {
                    crash_at_step: rng.random_range(0..4),
                    partial_bytes: rng.random_bool(0.5).then(|| rng.random_range(0..64)),
                }
            });
            (i, point, nested)
        })
        .collect();

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(8);
    let chunk = points.len().div_ceil(workers).max(1);
    let trials = std::thread::scope(|s| {
        let handles: Vec<_> = points
            .chunks(chunk)
            .map(|part| {
                let run = &run;
                s.spawn(move || {
                    part.iter()
                        .map(|&(i, p, f)| run_trial(run, workload, p, f, &workdir.join(format!("trial-{i}"))))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("trial thread panicked")).collect::<Result<Vec<_>>>()
    })?;

    Ok(CrashReport {
        log_bytes: run.log_bytes,
        commits: run.commits.len(),
        checkpoints: run.checkpoints.len(),
        trials: trials.into_iter().flatten().collect(),
        elapsed: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CrashWorkload {
        CrashWorkload { ops: 600, keys: 40, checkpoint_every_txns: 50, segment_capacity: 8 * 1024, flush_threshold: 40, ..CrashWorkload::default() }
    }

    #[test]
    fn empty_and_full_cuts() {
        let dir = tempfile::tempdir().unwrap();
        let w = small();
        let run = record_workload(dir.path(), &w).unwrap();
        let scratch = tempfile::tempdir().unwrap();
        let empty = run_trial(&run, &w, 0, None, &scratch.path().join("a")).unwrap();
        assert_eq!(empty.durable_txns, 0);
        assert!(empty.passed(), "{empty:?}");
        let full = run_trial(&run, &w, run.log_bytes(), None, &scratch.path().join("b")).unwrap();
        assert_eq!(full.durable_txns, run.commits());
        assert!(full.passed(), "{full:?}");
    }

    #[test]
    fn cut_at_every_commit_boundary_and_just_before() {
        let dir = tempfile::tempdir().unwrap();
        let w = small();
        let run = record_workload(dir.path(), &w).unwrap();
        let scratch = tempfile::tempdir().unwrap();
        for c in run.commits.iter().step_by(17) {
            for point in [c.end - 1, c.end] {
                let t = run_trial(&run, &w, point, None, &scratch.path().join("t")).unwrap();
                assert!(t.passed(), "{t:?}");
            }
        }
    }

    #[test]
    fn random_schedule_with_nested_crashes() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_crash_injection(dir.path(), &small(), &CrashSchedule { points: 30, ..CrashSchedule::default() }).unwrap();
        assert_eq!(report.passed(), 30, "{:?}", report.trials.iter().filter(|t| !t.passed()).collect::<Vec<_>>());
        assert!(report.nested() > 0);
    }
}

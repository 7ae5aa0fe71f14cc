//! Benchmark subcommands. Each run opens a fresh engine directory under
//! the configured root, executes its phases and verifies the final contents
//! against the versions the workload issued.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::engines::{open_baseline, open_logbase, KvEngine, GROUP, TABLE};
use super::keys::{record_key, record_value, value_stamp, KeyChooser, KeyDistribution};
use super::metrics::{LatencyRecorder, MetricsReport, PhaseMetrics};
use crate::baseline::{BaselineConfig, BaselineEngine};
use crate::compaction::CompactionConfig;
use crate::engine::{Engine, EngineConfig};
use crate::error::{Error, Result};
use crate::store::StoreConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineKind {
    Logbase,
    Baseline,
}

impl FromStr for EngineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logbase" | "logstore" => Ok(EngineKind::Logbase),
            "baseline" | "waldata" => Ok(EngineKind::Baseline),
            other => Err(Error::InvalidConfig(format!("unknown engine {other:?}"))),
        }
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EngineKind::Logbase => "logbase",
            EngineKind::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Load,
    ReadRandom,
    ScanSeq,
    ScanRange,
    Mixed,
    TxnMixed,
    CheckpointBench,
    RecoveryBench,
    Compact,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Load => "load",
            Command::ReadRandom => "read-random",
            Command::ScanSeq => "scan-seq",
            Command::ScanRange => "scan-range",
            Command::Mixed => "mixed",
            Command::TxnMixed => "txn-mixed",
            Command::CheckpointBench => "checkpoint-bench",
            Command::RecoveryBench => "recovery-bench",
            Command::Compact => "compact",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub record_count: u64,
    pub record_size: usize,
    pub key_space_max: u64,
    /// Percentage of reads; the rest are updates.
    pub read_pct: u32,
    pub distribution: KeyDistribution,
    pub op_count: u64,
    pub warmup_ops: u64,
    pub seed: u64,
    pub clients: usize,
    /// Records per range scan.
    pub scan_length: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            record_count: 10_000,
            record_size: 1024,
            key_space_max: 2_000_000_000,
            read_pct: 5,
            distribution: KeyDistribution::Zipfian { theta: 1.0 },
            op_count: 10_000,
            warmup_ops: 0,
            seed: 42,
            clients: 1,
            scan_length: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub engine: EngineKind,
    /// Root directory; each engine gets a subdirectory named after it.
    pub dir: PathBuf,
    pub workload: WorkloadSpec,
    pub segment_bytes: u64,
    pub flush_threshold: u64,
    pub checkpoint_every: Option<u64>,
    pub cache: bool,
    pub with_checkpoint: bool,
    /// Wipe an existing engine directory instead of refusing to run.
    pub overwrite: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            engine: EngineKind::Logbase,
            dir: PathBuf::from("bench-data"),
            workload: WorkloadSpec::default(),
            segment_bytes: 4 << 20,
            flush_threshold: 10_000,
            checkpoint_every: None,
            cache: false,
            with_checkpoint: true,
            overwrite: false,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.workload;
        if w.record_count == 0 {
            return Err(Error::InvalidConfig("record count must be positive".into()));
        }
        if w.record_size < 16 {
            return Err(Error::InvalidConfig("record size must be at least 16 bytes".into()));
        }
        if w.key_space_max < w.record_count {
            return Err(Error::InvalidConfig("key space smaller than record count".into()));
        }
        if w.read_pct > 100 {
            return Err(Error::InvalidConfig("read percentage above 100".into()));
        }
        if w.clients == 0 {
            return Err(Error::InvalidConfig("need at least one client".into()));
        }
        KeyChooser::new(w.record_count, w.distribution)?;
        Ok(())
    }

    pub fn logbase_config(&self) -> EngineConfig {
        EngineConfig {
            store: StoreConfig::default().with_segment_capacity(self.segment_bytes),
            buffer_capacity: if self.cache { self.workload.record_count as usize } else { 0 },
            flush_threshold: self.flush_threshold,
            checkpoint_every: self.checkpoint_every,
            checkpoint_on_recovery: false,
            ..EngineConfig::default()
        }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig { cache_blocks: if self.cache { 1024 } else { 0 }, ..BaselineConfig::default() }
    }

    fn key(&self, i: u64) -> Vec<u8> {
        record_key(i, self.workload.record_count, self.workload.key_space_max)
    }
}

fn on_off(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("{key} expects on or off, got {value:?}"))),
    }
}

fn number<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().replace('_', "").parse().map_err(|_| Error::InvalidConfig(format!("{key}: {value:?} is not a number")))
}

/// Parses `R/U` read/update percentages, e.g. `5/95`.
pub fn parse_mix(value: &str) -> Result<u32> {
    let bad = || Error::InvalidConfig(format!("mix {value:?} must be read/update percentages summing to 100"));
    let (r, u) = value.split_once('/').ok_or_else(bad)?;
    let (r, u): (u32, u32) = (r.trim().parse().map_err(|_| bad())?, u.trim().parse().map_err(|_| bad())?);
    if r + u != 100 {
        return Err(bad());
    }
    Ok(r)
}

impl BenchConfig {
    /// Applies one `key=value` setting; keys match the CLI flag names.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let w = &mut self.workload;
        match key {
            "engine" => self.engine = value.parse()?,
            "dir" => self.dir = PathBuf::from(value),
            "records" => w.record_count = number(key, value)?,
            "record-size" => w.record_size = number(key, value)?,
            "key-space" => w.key_space_max = number(key, value)?,
            "ops" => w.op_count = number(key, value)?,
            "warmup" => w.warmup_ops = number(key, value)?,
            "mix" => w.read_pct = parse_mix(value)?,
            "dist" => {
                w.distribution = match value {
                    "zipfian" => KeyDistribution::Zipfian { theta: 1.0 },
                    "uniform" => KeyDistribution::Uniform,
                    _ => return Err(Error::InvalidConfig(format!("unknown distribution {value:?}"))),
                }
            }
            "theta" => {
                let theta = number(key, value)?;
                if let KeyDistribution::Zipfian { theta: t } = &mut w.distribution {
                    *t = theta;
                }
            }
            "seed" => w.seed = number(key, value)?,
            "clients" => w.clients = number(key, value)?,
            "scan-length" => w.scan_length = number(key, value)?,
            "segment-bytes" => self.segment_bytes = number(key, value)?,
            "flush-threshold" => self.flush_threshold = number(key, value)?,
            "checkpoint-every" => self.checkpoint_every = Some(number(key, value)?).filter(|&n: &u64| n > 0),
            "cache" => self.cache = on_off(key, value)?,
            "with-checkpoint" => self.with_checkpoint = on_off(key, value)?,
            "overwrite" => self.overwrite = on_off(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    /// Applies `settings` in order. `dist` is applied before `theta` so the
    /// two can appear in any order.
    pub fn apply_all<'a>(&mut self, settings: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        let mut settings: Vec<_> = settings.into_iter().collect();
        settings.sort_by_key(|(k, _)| *k == "theta");
        for (k, v) in settings {
            self.apply(k, v)?;
        }
        Ok(())
    }
}

/// Reads a `key=value` config file. Blank lines and `#` comments are
/// skipped.
pub fn parse_config_file(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::InvalidConfig(format!("config line {}: expected key=value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Prepares `root/name`, refusing to reuse a non-empty directory unless
/// `overwrite` is set.
fn engine_dir(root: &Path, name: &str, overwrite: bool) -> Result<PathBuf> {
    let dir = root.join(name);
    if dir.exists() && std::fs::read_dir(&dir)?.next().is_some() {
        if !overwrite {
            return Err(Error::InvalidConfig(format!("{} is not empty (pass --overwrite to replace it)", dir.display())));
        }
        std::fs::remove_dir_all(&dir)?;
    }
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Highest version issued per record.
struct Shadow {
    versions: Vec<AtomicU64>,
}

impl Shadow {
    fn new(n: u64) -> Self {
        Shadow { versions: (0..n).map(|_| AtomicU64::new(0)).collect() }
    }

    fn next_version(&self, i: u64) -> u64 {
        self.versions[i as usize].fetch_add(1, Ordering::AcqRel) + 1
    }
}

struct Run<'a> {
    cfg: &'a BenchConfig,
    chooser: KeyChooser,
    shadow: Shadow,
    report: MetricsReport,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a BenchConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Run {
            cfg,
            chooser: KeyChooser::new(cfg.workload.record_count, cfg.workload.distribution)?,
            shadow: Shadow::new(cfg.workload.record_count),
            report: MetricsReport::default(),
        })
    }

    fn load(&mut self, e: &dyn KvEngine) -> Result<()> {
        let w = &self.cfg.workload;
        let before = e.io();
        let mut lat = LatencyRecorder::default();
        let start = Instant::now();
        for i in 0..w.record_count {
            let t = Instant::now();
            e.put(&self.cfg.key(i), &record_value(i, 0, w.record_size))?;
            lat.record(t.elapsed());
        }
        e.finish_load()?;
        let m = PhaseMetrics::new(e.name(), "load").with_timing(w.record_count, start.elapsed(), &mut lat).with_io(e.io().since(&before));
        self.report.push(m);
        Ok(())
    }

    fn read_random(&mut self, e: &dyn KvEngine) -> Result<()> {
        let w = &self.cfg.workload;
        let mut rng = ChaCha8Rng::seed_from_u64(w.seed);
        let before = e.io();
        let mut lat = LatencyRecorder::default();
        let start = Instant::now();
        for _ in 0..w.op_count {
            let i = self.chooser.next(&mut rng);
            let t = Instant::now();
            e.get(&self.cfg.key(i))?;
            lat.record(t.elapsed());
        }
        let io = e.io().since(&before);
        let per_op = io.storage_reads as f64 / w.op_count.max(1) as f64;
        let phase = if self.cfg.cache { "read-random-cache" } else { "read-random-nocache" };
        let m = PhaseMetrics::new(e.name(), phase)
            .with_timing(w.op_count, start.elapsed(), &mut lat)
            .with_io(io)
            .with_note(format!("reads/op={per_op:.3}"));
        self.report.push(m);
        Ok(())
    }

    fn scan_seq(&mut self, e: &dyn KvEngine) -> Result<()> {
        let before = e.io();
        let start = Instant::now();
        let rows = e.scan_all()?;
        let mut lat = LatencyRecorder::default();
        lat.record(start.elapsed());
        let m = PhaseMetrics::new(e.name(), "scan-seq").with_timing(rows.len() as u64, start.elapsed(), &mut lat).with_io(e.io().since(&before));
        self.report.push(m);
        if rows.len() as u64 != self.cfg.workload.record_count {
            return Err(Error::Corrupt(format!("full scan returned {} of {} records", rows.len(), self.cfg.workload.record_count)));
        }
        Ok(())
    }

    fn scan_range(&mut self, e: &dyn KvEngine, phase: &str) -> Result<()> {
        let w = &self.cfg.workload;
        let scans = (w.op_count / w.scan_length.max(1)).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(w.seed ^ 0x5ca7);
        let before = e.io();
        let mut lat = LatencyRecorder::default();
        let mut rows = 0u64;
        let start = Instant::now();
        for _ in 0..scans {
            let first = self.chooser.next(&mut rng);
            let last = first + w.scan_length;
            let end = (last < w.record_count).then(|| self.cfg.key(last));
            let t = Instant::now();
            let got = e.scan(&self.cfg.key(first), end.as_deref())?;
            lat.record(t.elapsed());
            rows += got.len() as u64;
        }
        let m = PhaseMetrics::new(e.name(), phase)
            .with_timing(scans, start.elapsed(), &mut lat)
            .with_io(e.io().since(&before))
            .with_note(format!("rows={rows}"));
        self.report.push(m);
        Ok(())
    }

    /// One read or update chosen by the mix.
    fn mixed_op(&self, e: &dyn KvEngine, rng: &mut ChaCha8Rng) -> Result<()> {
        let w = &self.cfg.workload;
        let i = self.chooser.next(rng);
        if rng.random_range(0..100) < w.read_pct {
            e.get(&self.cfg.key(i))?;
        } else {
            let v = self.shadow.next_version(i);
            e.put(&self.cfg.key(i), &record_value(i, v, w.record_size))?;
        }
        Ok(())
    }

    fn mixed(&mut self, e: &dyn KvEngine) -> Result<()> {
        let w = self.cfg.workload.clone();
        let mut warm = ChaCha8Rng::seed_from_u64(w.seed ^ 0x3a3a);
        for _ in 0..w.warmup_ops {
            self.mixed_op(e, &mut warm)?;
        }
        let before = e.io();
        let start = Instant::now();
        let this = &*self;
        let per_client = w.op_count.div_ceil(w.clients as u64);
        let results: Vec<Result<LatencyRecorder>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..w.clients)
                .map(|c| {
                    s.spawn(move || {
                        let mut rng = ChaCha8Rng::seed_from_u64(w.seed.wrapping_add(c as u64 + 1));
                        let mut lat = LatencyRecorder::default();
                        for _ in 0..per_client {
                            let t = Instant::now();
                            this.mixed_op(e, &mut rng)?;
                            lat.record(t.elapsed());
                        }
                        Ok(lat)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("client thread panicked")).collect()
        });
        let elapsed = start.elapsed();
        let mut lat = LatencyRecorder::default();
        for r in results {
            lat.merge(r?);
        }
        let phase = format!("mixed-{}r{}u", w.read_pct, 100 - w.read_pct);
        let m = PhaseMetrics::new(e.name(), &phase)
            .with_timing(per_client * w.clients as u64, elapsed, &mut lat)
            .with_io(e.io().since(&before))
            .with_note(format!("clients={}", w.clients));
        self.report.push(m);
        Ok(())
    }

    fn txn_mixed(&mut self, e: &Engine) -> Result<()> {
        let w = self.cfg.workload.clone();
        let before = KvEngine::io(e);
        let start = Instant::now();
        let this = &*self;
        let per_client = w.op_count.div_ceil(w.clients as u64);
        let commits = AtomicU64::new(0);
        let aborts = AtomicU64::new(0);
        let results: Vec<Result<LatencyRecorder>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..w.clients)
                .map(|c| {
                    let (commits, aborts) = (&commits, &aborts);
                    s.spawn(move || {
                        let mut rng = ChaCha8Rng::seed_from_u64(w.seed.wrapping_add(1000 + c as u64));
                        let mut lat = LatencyRecorder::default();
                        for _ in 0..per_client {
                            let read_only = rng.random_range(0..100) < w.read_pct;
                            let keys: Vec<u64> = (0..if read_only { 4 } else { 2 }).map(|_| this.chooser.next(&mut rng)).collect();
                            let t = Instant::now();
                            let mut txn = e.begin();
                            for &i in &keys {
                                e.txn_read(&mut txn, TABLE, &this.cfg.key(i), GROUP)?;
                            }
                            if !read_only {
                                for &i in &keys {
                                    let v = this.shadow.next_version(i);
                                    e.txn_write(&mut txn, TABLE, &this.cfg.key(i), GROUP, &record_value(i, v, w.record_size))?;
                                }
                            }
                            match e.commit(&mut txn) {
                                Ok(_) => commits.fetch_add(1, Ordering::Relaxed),
                                Err(err) if err.is_conflict() => aborts.fetch_add(1, Ordering::Relaxed),
                                Err(err) => return Err(err),
                            };
                            lat.record(t.elapsed());
                        }
                        Ok(lat)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("client thread panicked")).collect()
        });
        let elapsed = start.elapsed();
        let mut lat = LatencyRecorder::default();
        for r in results {
            lat.merge(r?);
        }
        let phase = format!("txn-mixed-{}ro{}rmw", w.read_pct, 100 - w.read_pct);
        let m = PhaseMetrics::new("logbase", &phase)
            .with_timing(per_client * w.clients as u64, elapsed, &mut lat)
            .with_io(KvEngine::io(e).since(&before))
            .with_note(format!("commits={} aborts={}", commits.into_inner(), aborts.into_inner()));
        self.report.push(m);
        Ok(())
    }

    /// Checks every record against the versions the workload issued. With a
    /// single client the newest issued version must be visible; with several
    /// the visible version must be one that was issued.
    fn verify(&mut self, e: &dyn KvEngine) -> Result<()> {
        let w = &self.cfg.workload;
        let exact = w.clients == 1 && w.warmup_ops == 0;
        let start = Instant::now();
        let mut bad = 0u64;
        for i in 0..w.record_count {
            let issued = self.shadow.versions[i as usize].load(Ordering::Acquire);
            let ok = match e.get(&self.cfg.key(i))?.as_deref().and_then(value_stamp) {
                Some((rec, v)) => rec == i && if exact { v == issued } else { v <= issued },
                None => false,
            };
            bad += u64::from(!ok);
        }
        let mut lat = LatencyRecorder::default();
        let m = PhaseMetrics::new(e.name(), "verify")
            .with_timing(w.record_count, start.elapsed(), &mut lat)
            .with_note(if bad == 0 { "ok".to_string() } else { format!("{bad} mismatches") });
        self.report.push(m);
        if bad > 0 {
            return Err(Error::Corrupt(format!("verification found {bad} mismatching records")));
        }
        Ok(())
    }
}

fn require_logbase(cfg: &BenchConfig, cmd: Command) -> Result<()> {
    if cfg.engine != EngineKind::Logbase {
        return Err(Error::InvalidConfig(format!("{cmd} needs the logbase engine")));
    }
    Ok(())
}

enum Opened {
    Logbase(Box<Engine>),
    Baseline(Box<BaselineEngine>),
}

impl Opened {
    fn kv(&self) -> &dyn KvEngine {
        match self {
            Opened::Logbase(e) => e.as_ref(),
            Opened::Baseline(e) => e.as_ref(),
        }
    }
}

fn open_fresh(cfg: &BenchConfig, suffix: &str) -> Result<(PathBuf, Opened)> {
    let dir = engine_dir(&cfg.dir, &format!("{}{suffix}", cfg.engine), cfg.overwrite)?;
    let opened = match cfg.engine {
        EngineKind::Logbase => Opened::Logbase(Box::new(open_logbase(&dir, cfg.logbase_config())?)),
        EngineKind::Baseline => Opened::Baseline(Box::new(open_baseline(&dir, cfg.baseline_config())?)),
    };
    Ok((dir, opened))
}

/// Runs one subcommand and returns its per-phase metrics.
pub fn run(cmd: Command, cfg: &BenchConfig) -> Result<MetricsReport> {
    let mut run = Run::new(cfg)?;
    match cmd {
        Command::Load => {
            let (_, e) = open_fresh(cfg, "")?;
            run.load(e.kv())?;
            run.verify(e.kv())?;
        }
        Command::ReadRandom => {
            let (_, e) = open_fresh(cfg, "")?;
            run.load(e.kv())?;
            run.read_random(e.kv())?;
        }
        Command::ScanSeq => {
            let (_, e) = open_fresh(cfg, "")?;
            run.load(e.kv())?;
            run.scan_seq(e.kv())?;
        }
        Command::ScanRange => {
            let (_, e) = open_fresh(cfg, "")?;
            run.load(e.kv())?;
            run.scan_range(e.kv(), "scan-range")?;
        }
        Command::Mixed => {
            let (_, e) = open_fresh(cfg, "")?;
            run.load(e.kv())?;
            run.mixed(e.kv())?;
            run.verify(e.kv())?;
        }
        Command::TxnMixed => {
            require_logbase(cfg, cmd)?;
            let (_, e) = open_fresh(cfg, "")?;
            let Opened::Logbase(engine) = &e else { unreachable!("checked above") };
            let engine: &Engine = engine;
            run.load(engine)?;
            run.txn_mixed(engine)?;
            run.verify(engine)?;
        }
        Command::CheckpointBench => {
            require_logbase(cfg, cmd)?;
            checkpoint_bench(&mut run)?;
        }
        Command::RecoveryBench => recovery_bench(&mut run)?,
        Command::Compact => {
            require_logbase(cfg, cmd)?;
            let (_, e) = open_fresh(cfg, "")?;
            let Opened::Logbase(engine) = &e else { unreachable!("checked above") };
            let engine: &Engine = engine;
            run.load(engine)?;
            let updates = WorkloadSpec { read_pct: 0, clients: 1, ..cfg.workload.clone() };
            let update_cfg = BenchConfig { workload: updates, ..cfg.clone() };
            let mut churn = Run { cfg: &update_cfg, chooser: run.chooser.clone(), shadow: run.shadow, report: MetricsReport::default() };
            churn.mixed(engine)?;
            run.shadow = churn.shadow;
            run.report.phases.extend(churn.report.phases);
            run.scan_range(engine, "scan-range-before")?;
            let estimate = engine.estimate_reclaim(CompactionConfig::default().retention);
            let started = Instant::now();
            let c = engine.compact(CompactionConfig::default())?;
            let mut lat = LatencyRecorder::default();
            lat.record(started.elapsed());
            run.report.push(
                PhaseMetrics::new("logbase", "compact")
                    .with_timing(c.versions_in, started.elapsed(), &mut lat)
                    .with_note(format!(
                        "input={}B output={}B reclaimed={}B estimate={}B",
                        c.input_bytes, c.output_bytes, c.reclaimed_bytes, estimate
                    )),
            );
            engine.buffer().clear();
            run.scan_range(engine, "scan-range-after")?;
            run.verify(engine)?;
        }
    }
    Ok(run.report)
}

fn checkpoint_bench(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let n = cfg.workload.record_count;
    for threshold in [n / 4, n / 2, n].into_iter().filter(|&t| t > 0) {
        let dir = engine_dir(&cfg.dir, &format!("logbase-ckpt-{threshold}"), cfg.overwrite)?;
        {
            let config = EngineConfig { checkpoint_every: Some(threshold), ..cfg.logbase_config() };
            let e = open_logbase(&dir, config)?;
            let start = Instant::now();
            for i in 0..n {
                e.put(TABLE, &cfg.key(i), GROUP, &record_value(i, 0, cfg.workload.record_size))?;
            }
            let elapsed = start.elapsed();
            let mut lat = LatencyRecorder::default();
            let m = PhaseMetrics::new("logbase", &format!("checkpoint-write@{threshold}"))
                .with_timing(n, elapsed, &mut lat)
                .with_io(KvEngine::io(&e))
                .with_note(format!("checkpoints={}", e.metrics().checkpoints));
            run.report.push(m);
        }
        let (recovery, redo) = timed_open(&dir, cfg.logbase_config())?;
        let mut m = PhaseMetrics::new("logbase", &format!("checkpoint-reload@{threshold}"));
        m.recovery_ms = Some(recovery.as_secs_f64() * 1e3);
        m.redo_entries = Some(redo);
        run.report.push(m);
    }
    Ok(())
}

fn timed_open(dir: &Path, config: EngineConfig) -> Result<(Duration, u64)> {
    let start = Instant::now();
    let e = Engine::open(dir, config)?;
    let elapsed = start.elapsed();
    Ok((elapsed, e.recovery_report().redo_scanned))
}

fn recovery_bench(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let n = cfg.workload.record_count;
    let size = cfg.workload.record_size;
    match cfg.engine {
        EngineKind::Logbase => {
            let dir = engine_dir(&cfg.dir, "logbase", cfg.overwrite)?;
            {
                let e = open_logbase(&dir, cfg.logbase_config())?;
                for i in 0..n {
                    if cfg.with_checkpoint && i == n / 2 {
                        e.checkpoint()?;
                    }
                    e.put(TABLE, &cfg.key(i), GROUP, &record_value(i, 0, size))?;
                }
            }
            let start = Instant::now();
            let e = Engine::open(&dir, cfg.logbase_config())?;
            let elapsed = start.elapsed();
            let r = e.recovery_report();
            let mut m = PhaseMetrics::new("logbase", "recovery").with_note(format!(
                "checkpoint={} redo_from={}:{}",
                if cfg.with_checkpoint { "on" } else { "off" },
                r.redo_start.segment,
                r.redo_start.offset
            ));
            m.recovery_ms = Some(elapsed.as_secs_f64() * 1e3);
            m.redo_entries = Some(r.redo_scanned);
            run.report.push(m);
            run.verify(&e)?;
        }
        EngineKind::Baseline => {
            let dir = engine_dir(&cfg.dir, "baseline", cfg.overwrite)?;
            {
                let e = open_baseline(&dir, cfg.baseline_config())?;
                for i in 0..n {
                    e.put(&cfg.key(i), &record_value(i, 0, size))?;
                }
            }
            let start = Instant::now();
            let e = open_baseline(&dir, cfg.baseline_config())?;
            let mut m = PhaseMetrics::new("baseline", "recovery").with_note("wal replay");
            m.recovery_ms = Some(start.elapsed().as_secs_f64() * 1e3);
            run.report.push(m);
            run.verify(&e)?;
        }
    }
    Ok(())
}

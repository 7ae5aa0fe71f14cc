//! The log-only storage engine: tables, reads, writes and transactions.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use logbase_core::checkpoint::{CheckpointBlock, IndexFileRef, SortedMeta};
use logbase_core::{
    IndexEntry, LogAddress, LogEntry, LogKey, RowKey, SegmentKind, TabletId, Timestamp, TxnId,
};
use parking_lot::{Mutex, RwLock};

use crate::buffer::{CacheKey, ReadBuffer};
use crate::error::{ConflictReason, Error, Result};
use crate::group_commit::{GroupCommitter, DEFAULT_WINDOW};
use crate::recovery::{RecoveryFault, RecoveryReport};
use crate::schema::{Catalog, TableSchema};
use crate::store::{SegmentStore, StatsSnapshot, StoreConfig};
use crate::tablet::Tablet;
use crate::txn::{LockKey, LockTable, RangeRead, TimestampAuthority, Transaction, TxnStatus, WriteOp};

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub store: StoreConfig,
    /// Read buffer size in records; 0 disables it.
    pub buffer_capacity: usize,
    /// Updates to one column group's index before it is written out.
    pub flush_threshold: u64,
    /// Take a checkpoint after this many committed updates.
    pub checkpoint_every: Option<u64>,
    pub checkpoint_interval: Option<Duration>,
    pub group_commit_window: Duration,
    /// Attempts at acquiring commit-time write locks before giving up.
    pub lock_retry_limit: u32,
    pub lock_backoff: Duration,
    pub checkpoint_on_recovery: bool,
    pub checkpoints_kept: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            store: StoreConfig::default(),
            buffer_capacity: 10_000,
            flush_threshold: 10_000,
            checkpoint_every: None,
            checkpoint_interval: None,
            group_commit_window: DEFAULT_WINDOW,
            lock_retry_limit: 64,
            lock_backoff: Duration::from_micros(200),
            checkpoint_on_recovery: true,
            checkpoints_kept: 2,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.store.validate()?;
        if self.flush_threshold == 0 {
            return Err(Error::InvalidConfig("flush_threshold must be positive".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::InvalidConfig("checkpoint_every must be positive".into()));
        }
        if self.checkpoints_kept == 0 {
            return Err(Error::InvalidConfig("at least one checkpoint must be kept".into()));
        }
        Ok(())
    }
}

/// A record assembled from its column groups. Groups with no visible
/// version are `None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tuple {
    pub key: Vec<u8>,
    pub groups: Vec<(String, Option<Vec<u8>>)>,
}

#[derive(Debug, Clone)]
pub(crate) struct TableHandle {
    pub schema: Arc<TableSchema>,
    /// Ascending by low key.
    pub tablets: Vec<Arc<Tablet>>,
}

impl TableHandle {
    fn route(&self, key: &[u8]) -> Result<&Arc<Tablet>> {
        let i = self.tablets.partition_point(|t| t.def.low.as_slice() <= key);
        i.checked_sub(1).map(|i| &self.tablets[i]).filter(|t| t.contains(key)).ok_or(Error::KeyOutOfRange)
    }

    fn group(&self, group: &str) -> Result<usize> {
        self.schema.group_index(group).ok_or_else(|| Error::UnknownGroup {
            table: self.schema.name.clone(),
            group: group.to_string(),
        })
    }
}

#[derive(Debug, Default)]
pub(crate) struct CheckpointState {
    pub next_seq: u64,
    pub next_file: u64,
    /// Oldest first.
    pub live: Vec<CheckpointBlock>,
    /// Most recent persisted index file per (tablet, group).
    pub flushed: HashMap<(TabletId, usize), IndexFileRef>,
}

#[derive(Debug, Default)]
struct Counters {
    commits: AtomicU64,
    aborts: AtomicU64,
    conflicts: AtomicU64,
    gets: AtomicU64,
    index_flushes: AtomicU64,
    checkpoints: AtomicU64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EngineMetrics {
    pub store: StatsSnapshot,
    pub commits: u64,
    pub aborts: u64,
    pub conflicts: u64,
    pub gets: u64,
    pub buffer_hits: u64,
    pub buffer_misses: u64,
    pub index_flushes: u64,
    pub checkpoints: u64,
    pub commit_batches: u64,
    pub index_entries: u64,
    pub index_bytes: u64,
}

struct Mutation {
    tablet: Arc<Tablet>,
    table: String,
    group: usize,
    key: Vec<u8>,
    op: WriteOp,
}

pub struct Engine {
    pub(crate) dir: PathBuf,
    pub(crate) config: EngineConfig,
    pub(crate) store: Arc<SegmentStore>,
    pub(crate) catalog: Mutex<Catalog>,
    pub(crate) tables: RwLock<BTreeMap<String, TableHandle>>,
    pub(crate) clock: TimestampAuthority,
    pub(crate) next_txn: AtomicU64,
    locks: LockTable,
    pub(crate) committer: GroupCommitter,
    pub(crate) buffer: ReadBuffer,
    /// Held shared by committers from timestamp allocation until the index is
    /// updated; checkpoints and compaction cut/swap take it exclusively.
    pub(crate) gate: RwLock<()>,
    /// Held shared across an index lookup and the log read it leads to;
    /// removing segments takes it exclusively.
    pub(crate) reclaim: RwLock<()>,
    pub(crate) ckpt: Mutex<CheckpointState>,
    pub(crate) meta: RwLock<Option<(String, SortedMeta)>>,
    pub(crate) compacting: AtomicBool,
    updates_since_ckpt: AtomicU64,
    last_ckpt: Mutex<Instant>,
    counters: Counters,
    pub(crate) recovery: Mutex<RecoveryReport>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("dir", &self.dir).finish_non_exhaustive()
    }
}

fn dangling(addr: LogAddress, e: Error) -> Error {
    match e {
        Error::MissingSegment(_) | Error::AddressOutOfRange(_) => Error::DanglingAddress(addr),
        other => other,
    }
}

impl Engine {
    /// Opens the engine in `dir`, recovering whatever state is there.
    pub fn open(dir: impl AsRef<Path>, config: EngineConfig) -> Result<Engine> {
        Self::open_with_fault(dir, config, None)
    }

    /// Like [`open`](Self::open) but stops the post-recovery checkpoint at the
    /// point described by `fault`, simulating a crash during recovery.
    pub fn open_with_fault(dir: impl AsRef<Path>, config: EngineConfig, fault: Option<RecoveryFault>) -> Result<Engine> {
        config.validate()?;
        let dir = dir.as_ref().to_path_buf();
        let store = Arc::new(SegmentStore::open(&dir, config.store.clone())?);
        let catalog = Catalog::load(&dir)?;
        let mut tables = BTreeMap::new();
        for (name, entry) in &catalog.tables {
            let schema = Arc::new(entry.schema.clone());
            let mut tablets: Vec<Arc<Tablet>> =
                entry.tablets.iter().map(|d| Arc::new(Tablet::new(d.clone(), &schema))).collect();
            tablets.sort_by(|a, b| a.def.low.cmp(&b.def.low));
            tables.insert(name.clone(), TableHandle { schema, tablets });
        }
        let engine = Engine {
            committer: GroupCommitter::new(store.clone(), config.group_commit_window, 0),
            buffer: ReadBuffer::new(config.buffer_capacity),
            dir,
            store,
            catalog: Mutex::new(catalog),
            tables: RwLock::new(tables),
            clock: TimestampAuthority::new(1),
            next_txn: AtomicU64::new(1),
            locks: LockTable::new(),
            gate: RwLock::new(()),
            reclaim: RwLock::new(()),
            ckpt: Mutex::new(CheckpointState::default()),
            meta: RwLock::new(None),
            compacting: AtomicBool::new(false),
            updates_since_ckpt: AtomicU64::new(0),
            last_ckpt: Mutex::new(Instant::now()),
            counters: Counters::default(),
            recovery: Mutex::new(RecoveryReport::default()),
            config,
        };
        engine.recover(fault)?;
        Ok(engine)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &SegmentStore {
        &self.store
    }

    pub fn recovery_report(&self) -> RecoveryReport {
        self.recovery.lock().clone()
    }

    pub fn create_table(&self, schema: TableSchema, split_keys: &[Vec<u8>]) -> Result<()> {
        let mut catalog = self.catalog.lock();
        let mut next = catalog.clone();
        let entry = next.add_table(schema, split_keys)?.clone();
        next.save(&self.dir)?;
        *catalog = next;
        let schema = Arc::new(entry.schema);
        let tablets = entry.tablets.iter().map(|d| Arc::new(Tablet::new(d.clone(), &schema))).collect();
        self.tables.write().insert(schema.name.clone(), TableHandle { schema, tablets });
        Ok(())
    }

    pub fn schema(&self, table: &str) -> Result<Arc<TableSchema>> {
        Ok(self.table(table)?.schema)
    }

    pub fn table_names(&self) -> Vec<String> {
        self.tables.read().keys().cloned().collect()
    }

    pub(crate) fn table(&self, table: &str) -> Result<TableHandle> {
        self.tables.read().get(table).cloned().ok_or_else(|| Error::UnknownTable(table.to_string()))
    }

    pub(crate) fn all_tablets(&self) -> Vec<(Arc<TableSchema>, Arc<Tablet>)> {
        self.tables
            .read()
            .values()
            .flat_map(|h| h.tablets.iter().map(|t| (h.schema.clone(), t.clone())))
            .collect()
    }

    pub(crate) fn tablet_by_id(&self, id: TabletId) -> Option<Arc<Tablet>> {
        self.tables.read().values().flat_map(|h| h.tablets.iter()).find(|t| t.id() == id).cloned()
    }

    fn locate(&self, table: &str, key: &[u8], group: &str) -> Result<(Arc<Tablet>, usize)> {
        let h = self.table(table)?;
        let gi = h.group(group)?;
        Ok((h.route(key)?.clone(), gi))
    }

    fn cache_key(tablet: &Tablet, group: usize, key: &[u8]) -> CacheKey {
        CacheKey { tablet: tablet.id(), group: group as u16, key: key.to_vec() }
    }

    fn lock_key(tablet: &Tablet, group: usize, key: &[u8]) -> LockKey {
        LockKey { tablet: tablet.id(), group: group as u16, key: key.to_vec() }
    }

    /// A snapshot timestamp that sees every commit finished so far.
    pub fn snapshot(&self) -> Timestamp {
        self.clock.begin_snapshot()
    }

    // ---- reads ----

    /// Reads the value an index entry points at. The caller holds `reclaim`.
    pub(crate) fn fetch(&self, addr: LogAddress) -> Result<Option<Vec<u8>>> {
        let payload = self.store.read(addr).map_err(|e| dangling(addr, e))?;
        Ok(LogEntry::decode(&payload)?.into_value())
    }

    /// Latest committed value of a record and its timestamp.
    pub fn get(&self, table: &str, key: &[u8], group: &str) -> Result<Option<(Vec<u8>, Timestamp)>> {
        let (tablet, gi) = self.locate(table, key, group)?;
        self.counters.gets.fetch_add(1, Ordering::Relaxed);
        let ck = Self::cache_key(&tablet, gi, key);
        if let Some((ts, v)) = self.buffer.get(&ck) {
            return Ok(Some((v.to_vec(), ts)));
        }
        let _r = self.reclaim.read();
        let g = tablet.group(gi);
        let Some(entry) = g.latest(key) else {
            return Ok(None);
        };
        if entry.tombstone {
            return Ok(None);
        }
        let value = self.fetch(entry.addr)?.ok_or(Error::DanglingAddress(entry.addr))?;
        let ts = entry.ts();
        self.buffer.insert_fetched(ck, ts, Arc::from(value.as_slice()), || g.latest_ts(key) == Some(ts));
        Ok(Some((value, ts)))
    }

    /// The newest version with timestamp `<= as_of`.
    pub fn get_as_of(&self, table: &str, key: &[u8], group: &str, as_of: Timestamp) -> Result<Option<(Vec<u8>, Timestamp)>> {
        let (tablet, gi) = self.locate(table, key, group)?;
        self.counters.gets.fetch_add(1, Ordering::Relaxed);
        let _r = self.reclaim.read();
        let Some(entry) = tablet.group(gi).as_of(key, as_of) else {
            return Ok(None);
        };
        self.resolve(&tablet, gi, &entry)
    }

    fn resolve(&self, tablet: &Tablet, gi: usize, entry: &IndexEntry) -> Result<Option<(Vec<u8>, Timestamp)>> {
        if entry.tombstone {
            return Ok(None);
        }
        let ts = entry.ts();
        if let Some(v) = self.buffer.get_version(&Self::cache_key(tablet, gi, &entry.key.primary_key), ts) {
            return Ok(Some((v.to_vec(), ts)));
        }
        let value = self.fetch(entry.addr)?.ok_or(Error::DanglingAddress(entry.addr))?;
        Ok(Some((value, ts)))
    }

    /// Records in `[start, end)` visible at `snapshot_ts`, ascending by key.
    pub fn range_scan(
        &self,
        table: &str,
        group: &str,
        start: &[u8],
        end: Option<&[u8]>,
        snapshot_ts: Timestamp,
    ) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        let h = self.table(table)?;
        let gi = h.group(group)?;
        if end.is_some_and(|e| e < start) {
            return Err(logbase_core::Error::InvertedRange.into());
        }
        let _r = self.reclaim.read();
        let mut out = Vec::new();
        for tablet in h.tablets.iter().filter(|t| t.def.overlaps(start, end)) {
            let entries: Vec<IndexEntry> = tablet.group(gi).index.read().range(start, end, snapshot_ts)?.collect();
            for e in entries {
                if let Some((v, _)) = self.resolve(tablet, gi, &e)? {
                    out.push((e.key.primary_key, v));
                }
            }
        }
        Ok(out)
    }

    /// Every record of a column group visible at `snapshot_ts`, found by
    /// scanning the segments in parallel. Order is unspecified.
    ///
    /// `snapshot_ts` should come from [`snapshot`](Self::snapshot) so that
    /// no commit at or below it is still in flight.
    pub fn full_scan(&self, table: &str, group: &str, snapshot_ts: Timestamp) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        let h = self.table(table)?;
        let gi = h.group(group)?;
        let group_name = h.schema.groups[gi].name.clone();
        let _r = self.reclaim.read();
        let sorted: HashSet<u64> = self
            .meta
            .read()
            .as_ref()
            .and_then(|(_, m)| m.run(table, &group_name).map(|r| r.segments.iter().map(|s| s.seq).collect()))
            .unwrap_or_default();
        let segments: Vec<_> = self
            .store
            .list_segments()
            .into_iter()
            .filter(|s| s.kind == SegmentKind::Log || sorted.contains(&s.seq))
            .collect();

        type Candidate = (Option<TxnId>, Vec<u8>, LogAddress, Vec<u8>);
        struct Found {
            commits: HashSet<TxnId>,
            candidates: Vec<Candidate>,
        }
        let results: Vec<Result<Found>> = std::thread::scope(|s| {
            let handles: Vec<_> = segments
                .iter()
                .map(|&seg| {
                    let group_name = &group_name;
                    s.spawn(move || -> Result<Found> {
                        let mut found = Found { commits: HashSet::new(), candidates: Vec::new() };
                        for item in self.store.scan_segment(seg)? {
                            let (addr, payload) = item?;
                            match LogEntry::decode(&payload)? {
                                LogEntry::Write { log_key, row_key, txn_id, value }
                                    if log_key.table == table && &row_key.column_group == group_name =>
                                {
                                    found.candidates.push((Some(txn_id), row_key.primary_key, addr, value));
                                }
                                LogEntry::Commit { txn_id, .. } => {
                                    found.commits.insert(txn_id);
                                }
                                LogEntry::Stripped { primary_key, value: Some(value), .. } => {
                                    found.candidates.push((None, primary_key, addr, value));
                                }
                                _ => {}
                            }
                        }
                        Ok(found)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("scan thread panicked")).collect()
        });

        let mut commits = HashSet::new();
        let mut candidates = Vec::new();
        for r in results {
            let f = r?;
            commits.extend(f.commits);
            candidates.extend(f.candidates);
        }
        let mut out = Vec::new();
        for (txn, key, addr, value) in candidates {
            if txn.is_some_and(|t| !commits.contains(&t)) {
                continue;
            }
            let Ok(tablet) = h.route(&key) else { continue };
            let visible = tablet.group(gi).as_of(&key, snapshot_ts);
            if visible.is_some_and(|e| !e.tombstone && e.addr == addr) {
                out.push((key, value));
            }
        }
        Ok(out)
    }

    /// Joins all column groups of `key` as of `snapshot_ts`.
    pub fn reconstruct_tuple(&self, table: &str, key: &[u8], snapshot_ts: Timestamp) -> Result<Option<Tuple>> {
        let h = self.table(table)?;
        let mut groups = Vec::with_capacity(h.schema.groups.len());
        for g in &h.schema.groups {
            let v = self.get_as_of(table, key, &g.name, snapshot_ts)?.map(|(v, _)| v);
            groups.push((g.name.clone(), v));
        }
        if groups.iter().all(|(_, v)| v.is_none()) {
            return Ok(None);
        }
        Ok(Some(Tuple { key: key.to_vec(), groups }))
    }

    // ---- auto-commit writes ----

    fn lock_blocking(&self, lk: &LockKey, txn: TxnId) {
        while !self.locks.lock_timeout(lk, txn, Duration::from_secs(1)) {}
    }

    /// Writes one record in its own transaction. Returns the commit timestamp.
    pub fn put(&self, table: &str, key: &[u8], group: &str, value: &[u8]) -> Result<Timestamp> {
        let (tablet, gi) = self.locate(table, key, group)?;
        let txn_id = self.next_txn.fetch_add(1, Ordering::AcqRel);
        let lk = Self::lock_key(&tablet, gi, key);
        self.lock_blocking(&lk, txn_id);
        let m = Mutation { tablet, table: table.to_string(), group: gi, key: key.to_vec(), op: WriteOp::Put(value.to_vec()) };
        let res = self.persist_and_apply(txn_id, vec![m]);
        self.locks.unlock_all([&lk], txn_id);
        self.after_commit(&res);
        res
    }

    /// Deletes a record in its own transaction. Deleting a missing record is
    /// a no-op and returns `false`.
    pub fn delete(&self, table: &str, key: &[u8], group: &str) -> Result<bool> {
        let (tablet, gi) = self.locate(table, key, group)?;
        let txn_id = self.next_txn.fetch_add(1, Ordering::AcqRel);
        let lk = Self::lock_key(&tablet, gi, key);
        self.lock_blocking(&lk, txn_id);
        let live = tablet.group(gi).latest(key).is_some_and(|e| !e.tombstone);
        let res = if live {
            let m = Mutation { tablet, table: table.to_string(), group: gi, key: key.to_vec(), op: WriteOp::Delete };
            self.persist_and_apply(txn_id, vec![m]).map(|_| true)
        } else {
            Ok(false)
        };
        self.locks.unlock_all([&lk], txn_id);
        if live {
            self.after_commit(&res);
        }
        res
    }

    fn entry_for(m: &Mutation, txn_id: TxnId, ts: Timestamp, group_name: &str) -> LogEntry {
        let log_key = LogKey { lsn: 0, table: m.table.clone(), tablet: m.tablet.id() };
        let row_key = RowKey { primary_key: m.key.clone(), column_group: group_name.to_string(), write_ts: ts };
        match &m.op {
            WriteOp::Put(v) => LogEntry::Write { log_key, row_key, txn_id, value: v.clone() },
            WriteOp::Delete => LogEntry::Invalidated { log_key, row_key, txn_id },
        }
    }

    /// Persists the mutations plus a commit record, then makes them visible.
    /// The caller holds write locks on every mutated record.
    fn persist_and_apply(&self, txn_id: TxnId, muts: Vec<Mutation>) -> Result<Timestamp> {
        let limit = self.store.config().max_payload();
        for m in &muts {
            let probe = Self::entry_for(m, txn_id, 0, &m.tablet.group(m.group).name);
            if probe.encoded_len() > limit {
                return Err(Error::PayloadTooLarge { len: probe.encoded_len(), limit });
            }
        }
        let _announced = self.committer.announce();
        let _gate = self.gate.read();
        let ts = self.clock.begin_commit();
        let mut entries: Vec<LogEntry> =
            muts.iter().map(|m| Self::entry_for(m, txn_id, ts, &m.tablet.group(m.group).name)).collect();
        entries.push(LogEntry::Commit { log_key: LogKey { lsn: 0, table: String::new(), tablet: 0 }, txn_id, commit_ts: ts });
        let placed = match self.committer.submit(entries) {
            Ok(p) => p,
            Err(e) => {
                self.clock.finish_commit(ts);
                return Err(e);
            }
        };
        for (m, &(addr, lsn)) in muts.iter().zip(&placed) {
            let g = m.tablet.group(m.group);
            let ck = Self::cache_key(&m.tablet, m.group, &m.key);
            match &m.op {
                WriteOp::Put(v) => {
                    g.apply_write(&m.key, ts, addr, lsn);
                    self.buffer.update_if_present(&ck, ts, v);
                }
                WriteOp::Delete => {
                    g.apply_delete(&m.key, ts, addr, lsn);
                    self.buffer.invalidate(&ck);
                }
            }
        }
        self.clock.finish_commit(ts);
        drop(_gate);
        self.updates_since_ckpt.fetch_add(muts.len() as u64, Ordering::AcqRel);
        for m in &muts {
            if m.tablet.group(m.group).updates.load(Ordering::Acquire) >= self.config.flush_threshold {
                if let Err(e) = self.flush_group_index(&m.tablet, m.group) {
                    log::warn!("index flush failed: {e}");
                }
            }
        }
        Ok(ts)
    }

    fn after_commit<T>(&self, res: &Result<T>) {
        if res.is_ok() {
            self.counters.commits.fetch_add(1, Ordering::Relaxed);
            if let Err(e) = self.maybe_checkpoint() {
                log::warn!("background checkpoint failed: {e}");
            }
        } else {
            self.counters.aborts.fetch_add(1, Ordering::Relaxed);
        }
    }

    fn maybe_checkpoint(&self) -> Result<()> {
        let by_count = self
            .config
            .checkpoint_every
            .is_some_and(|n| self.updates_since_ckpt.load(Ordering::Acquire) >= n);
        let by_time = self.config.checkpoint_interval.is_some_and(|d| self.last_ckpt.lock().elapsed() >= d);
        if !(by_count || by_time) {
            return Ok(());
        }
        if let Some(mut st) = self.ckpt.try_lock() {
            self.checkpoint_locked(&mut st, &mut crate::recovery::FaultCursor::none())?;
        }
        Ok(())
    }

    pub(crate) fn note_checkpoint(&self) {
        self.updates_since_ckpt.store(0, Ordering::Release);
        *self.last_ckpt.lock() = Instant::now();
        self.counters.checkpoints.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn note_index_flush(&self) {
        self.counters.index_flushes.fetch_add(1, Ordering::Relaxed);
    }

    // ---- transactions ----

    pub fn begin(&self) -> Transaction {
        let id = self.next_txn.fetch_add(1, Ordering::AcqRel);
        Transaction::new(id, self.clock.begin_snapshot())
    }

    fn ensure_active(txn: &Transaction) -> Result<()> {
        if txn.status != TxnStatus::Active {
            return Err(Error::TxnNotActive(txn.id));
        }
        Ok(())
    }

    /// Reads a record as of the transaction's snapshot, or the transaction's
    /// own pending write.
    pub fn txn_read(&self, txn: &mut Transaction, table: &str, key: &[u8], group: &str) -> Result<Option<Vec<u8>>> {
        Self::ensure_active(txn)?;
        let (tablet, gi) = self.locate(table, key, group)?;
        let lk = Self::lock_key(&tablet, gi, key);
        if let Some((_, op)) = txn.write_set.get(&lk) {
            return Ok(match op {
                WriteOp::Put(v) => Some(v.clone()),
                WriteOp::Delete => None,
            });
        }
        let _r = self.reclaim.read();
        let entry = tablet.group(gi).as_of(key, txn.snapshot_ts);
        txn.read_set.entry(lk).or_insert(entry.as_ref().map(IndexEntry::ts));
        match entry {
            Some(e) => Ok(self.resolve(&tablet, gi, &e)?.map(|(v, _)| v)),
            None => Ok(None),
        }
    }

    /// Range read inside a transaction. In an update transaction the set of
    /// keys in the range is re-checked at commit.
    pub fn txn_read_range(
        &self,
        txn: &mut Transaction,
        table: &str,
        group: &str,
        start: &[u8],
        end: Option<&[u8]>,
    ) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        Self::ensure_active(txn)?;
        let h = self.table(table)?;
        let gi = h.group(group)?;
        if end.is_some_and(|e| e < start) {
            return Err(logbase_core::Error::InvertedRange.into());
        }
        let mut merged: BTreeMap<Vec<u8>, Vec<u8>> = BTreeMap::new();
        let _r = self.reclaim.read();
        for tablet in h.tablets.iter().filter(|t| t.def.overlaps(start, end)) {
            let entries: Vec<IndexEntry> = tablet.group(gi).index.read().range(start, end, txn.snapshot_ts)?.collect();
            txn.ranges.push(RangeRead {
                tablet: tablet.id(),
                group: gi as u16,
                start: start.to_vec(),
                end: end.map(<[u8]>::to_vec),
                keys: entries.iter().map(|e| e.key.primary_key.clone()).collect(),
            });
            for e in entries {
                if let Some((v, _)) = self.resolve(tablet, gi, &e)? {
                    merged.insert(e.key.primary_key, v);
                }
            }
            for (lk, (_, op)) in &txn.write_set {
                let in_range = lk.tablet == tablet.id()
                    && lk.group == gi as u16
                    && lk.key.as_slice() >= start
                    && end.is_none_or(|e| lk.key.as_slice() < e);
                if in_range {
                    match op {
                        WriteOp::Put(v) => merged.insert(lk.key.clone(), v.clone()),
                        WriteOp::Delete => merged.remove(&lk.key),
                    };
                }
            }
        }
        Ok(merged.into_iter().collect())
    }

    fn buffer_write(&self, txn: &mut Transaction, table: &str, key: &[u8], group: &str, op: WriteOp) -> Result<()> {
        Self::ensure_active(txn)?;
        let (tablet, gi) = self.locate(table, key, group)?;
        let lk = Self::lock_key(&tablet, gi, key);
        if !txn.read_set.contains_key(&lk) && !txn.write_set.contains_key(&lk) {
            // No blind writes: remember the version this write is based on.
            let observed = tablet.group(gi).as_of(key, txn.snapshot_ts).map(|e| e.ts());
            txn.read_set.insert(lk.clone(), observed);
        }
        txn.write_set.insert(lk, (table.to_string(), op));
        Ok(())
    }

    pub fn txn_write(&self, txn: &mut Transaction, table: &str, key: &[u8], group: &str, value: &[u8]) -> Result<()> {
        self.buffer_write(txn, table, key, group, WriteOp::Put(value.to_vec()))
    }

    pub fn txn_delete(&self, txn: &mut Transaction, table: &str, key: &[u8], group: &str) -> Result<()> {
        self.buffer_write(txn, table, key, group, WriteOp::Delete)
    }

    pub fn abort(&self, txn: &mut Transaction) {
        if txn.status == TxnStatus::Active || txn.status == TxnStatus::Validating {
            self.counters.aborts.fetch_add(1, Ordering::Relaxed);
        }
        if txn.status != TxnStatus::Committed {
            txn.status = TxnStatus::Aborted;
        }
        txn.write_set.clear();
        txn.read_set.clear();
        txn.ranges.clear();
    }

    fn conflict(&self, txn: &mut Transaction, held: &[&LockKey], reason: ConflictReason) -> Error {
        self.locks.unlock_all(held.iter().copied(), txn.id);
        self.counters.conflicts.fetch_add(1, Ordering::Relaxed);
        let id = txn.id;
        self.abort(txn);
        Error::Conflict { txn_id: id, reason }
    }

    fn tablet_in(&self, table: &str, id: TabletId) -> Result<Arc<Tablet>> {
        self.table(table)?
            .tablets
            .iter()
            .find(|t| t.id() == id)
            .cloned()
            .ok_or_else(|| Error::Corrupt(format!("tablet {id} missing from {table}")))
    }

    fn version_changed(&self, txn: &Transaction, lk: &LockKey, table: &str) -> Result<bool> {
        let tablet = self.tablet_in(table, lk.tablet)?;
        let current = tablet.group(lk.group as usize).latest_ts(&lk.key);
        Ok(txn.read_set.get(lk).copied().flatten() != current)
    }

    /// Validates and commits. On conflict the transaction is aborted and an
    /// [`Error::Conflict`] returned; the caller may retry with a new one.
    pub fn commit(&self, txn: &mut Transaction) -> Result<Timestamp> {
        Self::ensure_active(txn)?;
        if txn.write_set.is_empty() {
            txn.status = TxnStatus::Committed;
            return Ok(txn.snapshot_ts);
        }
        txn.status = TxnStatus::Validating;
        let keys: Vec<LockKey> = txn.write_set.keys().cloned().collect();
        let tables: Vec<String> = txn.write_set.values().map(|(t, _)| t.clone()).collect();

        let mut held = 0;
        let mut attempts = 0;
        while held < keys.len() {
            if self.locks.try_lock(&keys[held], txn.id) {
                held += 1;
                continue;
            }
            attempts += 1;
            let held_keys: Vec<&LockKey> = keys[..held].iter().collect();
            if attempts > self.config.lock_retry_limit {
                return Err(self.conflict(txn, &held_keys, ConflictReason::LockTimeout));
            }
            // Re-run the reads of the keys still to lock; a change means
            // validation would fail anyway.
            for (lk, table) in keys[held..].iter().zip(&tables[held..]) {
                if self.version_changed(txn, lk, table)? {
                    return Err(self.conflict(txn, &held_keys, ConflictReason::VersionChanged));
                }
            }
            self.locks.wait_for_release(self.config.lock_backoff * attempts.min(16));
        }
        let all: Vec<&LockKey> = keys.iter().collect();

        for (lk, table) in keys.iter().zip(&tables) {
            if self.version_changed(txn, lk, table)? {
                return Err(self.conflict(txn, &all, ConflictReason::VersionChanged));
            }
        }
        let ranges = std::mem::take(&mut txn.ranges);
        for r in &ranges {
            let Some(tablet) = self.tablet_by_id(r.tablet) else {
                return Err(Error::Corrupt(format!("tablet {} vanished", r.tablet)));
            };
            let now: Vec<Vec<u8>> = tablet
                .group(r.group as usize)
                .index
                .read()
                .range(&r.start, r.end.as_deref(), Timestamp::MAX)?
                .map(|e| e.key.primary_key)
                .collect();
            if now != r.keys {
                return Err(self.conflict(txn, &all, ConflictReason::RangeChanged));
            }
        }

        let mut muts = Vec::with_capacity(keys.len());
        for (lk, (table, op)) in std::mem::take(&mut txn.write_set) {
            let tablet = self.tablet_in(&table, lk.tablet)?;
            let gi = lk.group as usize;
            if op == WriteOp::Delete && !tablet.group(gi).latest(&lk.key).is_some_and(|e| !e.tombstone) {
                continue;
            }
            muts.push(Mutation { tablet, table, group: gi, key: lk.key, op });
        }
        let res = if muts.is_empty() { Ok(txn.snapshot_ts) } else { self.persist_and_apply(txn.id, muts) };
        self.locks.unlock_all(all, txn.id);
        match res {
            Ok(ts) => {
                txn.status = TxnStatus::Committed;
                txn.read_set.clear();
                self.after_commit(&Ok::<(), Error>(()));
                Ok(ts)
            }
            Err(e) => {
                txn.status = TxnStatus::Aborted;
                self.counters.aborts.fetch_add(1, Ordering::Relaxed);
                Err(e)
            }
        }
    }

    // ---- maintenance ----

    pub fn metrics(&self) -> EngineMetrics {
        let (entries, bytes) = self.all_tablets().iter().fold((0u64, 0u64), |(n, b), (_, t)| {
            let (tn, tb) = t.groups.iter().fold((0, 0), |(n, b), g| {
                let idx = g.index.read();
                (n + idx.entry_count() as u64, b + idx.approx_bytes() as u64)
            });
            (n + tn, b + tb)
        });
        EngineMetrics {
            store: self.store.stats(),
            commits: self.counters.commits.load(Ordering::Relaxed),
            aborts: self.counters.aborts.load(Ordering::Relaxed),
            conflicts: self.counters.conflicts.load(Ordering::Relaxed),
            gets: self.counters.gets.load(Ordering::Relaxed),
            buffer_hits: self.buffer.hits(),
            buffer_misses: self.buffer.misses(),
            index_flushes: self.counters.index_flushes.load(Ordering::Relaxed),
            checkpoints: self.counters.checkpoints.load(Ordering::Relaxed),
            commit_batches: self.committer.batches(),
            index_entries: entries,
            index_bytes: bytes,
        }
    }

    pub fn buffer(&self) -> &ReadBuffer {
        &self.buffer
    }

    /// Syncs outstanding appends and refuses further writes.
    pub fn close(&self) -> Result<()> {
        self.store.close()
    }
}

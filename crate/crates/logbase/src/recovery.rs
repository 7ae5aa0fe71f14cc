//! Checkpoints and restart recovery.
//!
//! Files next to the segments:
//!
//! - `index-{n:016}.idx`: one persisted column-group index.
//! - `checkpoint-{seq:016}.ckpt`: a checkpoint block naming its index files.
//! - `CURRENT`: pointer to the newest checkpoint block, replaced by rename.
//! - `sorted-{gen:016}.meta`: sorted-segment metadata written by compaction.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::{Duration, Instant};

use logbase_core::checkpoint::{self, CheckpointBlock, IndexFileRef, SortedMeta};
use logbase_core::{EntryHeader, IdxKey, IndexEntry, LogAddress, LogEntry, LogPosition, Lsn, MvIndex, SegmentId, SegmentKind, TabletId, Timestamp, TxnId};

use crate::engine::{CheckpointState, Engine};
use crate::error::{Error, Result};
use crate::schema::write_atomic;
use crate::tablet::Tablet;

pub const CURRENT_FILE: &str = "CURRENT";

pub fn checkpoint_file_name(seq: u64) -> String {
    format!("checkpoint-{seq:016}.ckpt")
}

pub fn index_file_name(n: u64) -> String {
    format!("index-{n:016}.idx")
}

pub fn meta_file_name(generation: u64) -> String {
    format!("sorted-{generation:016}.meta")
}

fn parse_numbered(name: &str, prefix: &str, suffix: &str) -> Option<u64> {
    let digits = name.strip_prefix(prefix)?.strip_suffix(suffix)?;
    (digits.len() == 16).then(|| digits.parse().ok()).flatten()
}

pub fn parse_checkpoint_name(name: &str) -> Option<u64> {
    parse_numbered(name, "checkpoint-", ".ckpt")
}

fn parse_index_name(name: &str) -> Option<u64> {
    parse_numbered(name, "index-", ".idx")
}

pub(crate) fn parse_meta_name(name: &str) -> Option<u64> {
    parse_numbered(name, "sorted-", ".meta")
}

/// Makes the checkpoint written at the end of recovery stop early, as if the
/// process died while writing it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecoveryFault {
    /// Zero-based file write to fail at: each index file, then the block,
    /// then `CURRENT`.
    pub crash_at_step: usize,
    /// Leave this many bytes of the failed file behind, written in place.
    pub partial_bytes: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    /// Checkpoint the index was loaded from; `None` means a full rebuild.
    pub checkpoint_seq: Option<u64>,
    pub redo_start: LogPosition,
    /// Log entries read during redo.
    pub redo_scanned: u64,
    /// Committed entries applied to the index during redo.
    pub redo_applied: u64,
    /// Entries skipped because their transaction never committed.
    pub uncommitted: u64,
    pub torn_tail: Option<LogPosition>,
    pub files_removed: usize,
    pub checkpoint_written: bool,
    pub elapsed: Duration,
}

/// Writes checkpoint files, failing on the configured step.
pub(crate) struct FaultCursor {
    plan: Option<RecoveryFault>,
    step: usize,
}

impl FaultCursor {
    pub(crate) fn none() -> Self {
        FaultCursor { plan: None, step: 0 }
    }

    fn write(&mut self, engine: &Engine, name: &str, bytes: &[u8]) -> Result<()> {
        let step = self.step;
        self.step += 1;
        if let Some(plan) = self.plan.filter(|p| p.crash_at_step == step) {
            if let Some(n) = plan.partial_bytes {
                fs::write(engine.dir.join(name), &bytes[..n.min(bytes.len())])?;
            }
            return Err(Error::InjectedFault(step));
        }
        write_atomic(&engine.dir, name, bytes)
    }
}

type LoadedCheckpoint = (CheckpointBlock, Vec<(IndexFileRef, MvIndex)>, Option<(String, SortedMeta)>);

impl Engine {
    /// Persists every column-group index together with the log position they
    /// cover. Writers are paused only while the position is captured.
    pub fn checkpoint(&self) -> Result<CheckpointBlock> {
        let mut st = self.ckpt.lock();
        self.checkpoint_locked(&mut st, &mut FaultCursor::none())
    }

    pub(crate) fn checkpoint_locked(&self, st: &mut CheckpointState, faults: &mut FaultCursor) -> Result<CheckpointBlock> {
        let tablets = self.all_tablets();
        let (log_position, last_lsn, next_ts, next_txn_id, sorted_meta, counts) = {
            let _gate = self.gate.write();
            self.store.sync()?;
            let counts: Vec<Vec<u64>> = tablets
                .iter()
                .map(|(_, t)| t.groups.iter().map(|g| g.updates.load(Ordering::Acquire)).collect())
                .collect();
            (
                self.store.end_position(),
                self.committer.last_lsn(),
                self.clock.peek_next(),
                self.next_txn.load(Ordering::Acquire),
                self.meta.read().as_ref().map(|(name, _)| name.clone()),
                counts,
            )
        };
        // Index files may pick up commits made after the gate was released.
        // Redo skips what they already contain, so that is harmless.
        let mut index_files = Vec::new();
        for ((_, tablet), counts) in tablets.iter().zip(counts) {
            for (gi, c) in counts.into_iter().enumerate() {
                let key = (tablet.id(), gi);
                let r = match st.flushed.get(&key) {
                    Some(r) if c == 0 => r.clone(),
                    _ => {
                        let r = self.write_index_file(st, tablet, gi, faults)?;
                        tablet.group(gi).updates.fetch_sub(c, Ordering::AcqRel);
                        st.flushed.insert(key, r.clone());
                        r
                    }
                };
                index_files.push(r);
            }
        }
        let block = CheckpointBlock { seq: st.next_seq, log_position, last_lsn, next_ts, next_txn_id, sorted_meta, index_files };
        st.next_seq += 1;
        let name = checkpoint_file_name(block.seq);
        faults.write(self, &name, &block.encode())?;
        faults.write(self, CURRENT_FILE, &checkpoint::encode_pointer(&name))?;
        st.live.push(block.clone());
        while st.live.len() > self.config.checkpoints_kept {
            let old = st.live.remove(0);
            remove_if_present(&self.dir.join(checkpoint_file_name(old.seq)))?;
        }
        self.gc_index_files(st)?;
        self.note_checkpoint();
        Ok(block)
    }

    fn write_index_file(&self, st: &mut CheckpointState, tablet: &Tablet, gi: usize, faults: &mut FaultCursor) -> Result<IndexFileRef> {
        let name = index_file_name(st.next_file);
        st.next_file += 1;
        let (bytes, entries) = {
            let idx = tablet.group(gi).index.read();
            (idx.encode(), idx.entry_count() as u64)
        };
        faults.write(self, &name, &bytes)?;
        Ok(IndexFileRef { tablet: tablet.id(), group: tablet.group(gi).name.clone(), file: name, entries })
    }

    /// Writes one group's index once enough updates have accumulated. Skipped
    /// when a checkpoint or compaction holds the checkpoint state.
    pub(crate) fn flush_group_index(&self, tablet: &Arc<Tablet>, gi: usize) -> Result<()> {
        let Some(mut st) = self.ckpt.try_lock() else {
            return Ok(());
        };
        let g = tablet.group(gi);
        let c = g.updates.load(Ordering::Acquire);
        if c < self.config.flush_threshold {
            return Ok(());
        }
        let r = self.write_index_file(&mut st, tablet, gi, &mut FaultCursor::none())?;
        g.updates.fetch_sub(c, Ordering::AcqRel);
        st.flushed.insert((tablet.id(), gi), r);
        self.note_index_flush();
        self.gc_index_files(&st)
    }

    /// Removes index files no live checkpoint or flush record refers to.
    fn gc_index_files(&self, st: &CheckpointState) -> Result<()> {
        let keep: HashSet<&str> = st
            .live
            .iter()
            .flat_map(|b| b.index_files.iter())
            .chain(st.flushed.values())
            .map(|r| r.file.as_str())
            .collect();
        for name in dir_names(&self.dir)? {
            if parse_index_name(&name).is_some() && !keep.contains(name.as_str()) {
                remove_if_present(&self.dir.join(&name))?;
            }
        }
        Ok(())
    }

    /// Rebuilds the in-memory indexes. Runs once, from `open`.
    pub(crate) fn recover(&self, fault: Option<RecoveryFault>) -> Result<()> {
        let started = Instant::now();
        let mut report = RecoveryReport::default();
        let mut st = self.ckpt.lock();

        let names = dir_names(&self.dir)?;
        for name in names.iter().filter(|n| n.ends_with(".tmp")) {
            remove_if_present(&self.dir.join(name))?;
        }
        st.next_seq = names.iter().filter_map(|n| parse_checkpoint_name(n)).max().map_or(0, |s| s + 1);
        st.next_file = names.iter().filter_map(|n| parse_index_name(n)).max().map_or(0, |s| s + 1);

        let adopted = self.load_latest_checkpoint(&names);
        let mut keep_ckpt = None;
        let (start, meta) = match adopted {
            Some((block, indexes, meta)) => {
                for (r, idx) in indexes {
                    let tablet = self.tablet_by_id(r.tablet).expect("checked while loading");
                    let gi = tablet.groups.iter().position(|g| g.name == r.group).expect("checked while loading");
                    *tablet.group(gi).index.write() = idx;
                    st.flushed.insert((r.tablet, gi), r);
                }
                self.clock.advance_to(block.next_ts);
                self.next_txn.fetch_max(block.next_txn_id, Ordering::AcqRel);
                self.committer.set_last_lsn(block.last_lsn);
                report.checkpoint_seq = Some(block.seq);
                // Older blocks stay around as fallbacks.
                let mut older: Vec<CheckpointBlock> = names
                    .iter()
                    .filter(|n| parse_checkpoint_name(n).is_some_and(|s| s < block.seq))
                    .filter_map(|n| CheckpointBlock::decode(&fs::read(self.dir.join(n)).ok()?).ok())
                    .collect();
                older.sort_by_key(|b| b.seq);
                let skip = older.len().saturating_sub(self.config.checkpoints_kept - 1);
                st.live = older.split_off(skip);
                keep_ckpt = Some(st.live.iter().map(|b| b.seq).chain([block.seq]).collect::<HashSet<u64>>());
                let start = block.log_position;
                st.live.push(block);
                (start, meta)
            }
            None => {
                let meta = self.latest_sorted_meta(&names);
                let start = match &meta {
                    Some((_, m)) => {
                        self.load_sorted(m)?;
                        m.cut
                    }
                    None => LogPosition::START,
                };
                (start, meta)
            }
        };
        report.files_removed += self.remove_stale_files(&names, keep_ckpt.as_ref(), meta.as_ref())?;
        *self.meta.write() = meta;

        report.redo_start = start;
        self.redo(start, &mut report)?;
        self.gc_index_files(&st)?;

        let needs_checkpoint = report.redo_scanned > 0 || report.checkpoint_seq.is_none();
        if fault.is_some() || (self.config.checkpoint_on_recovery && needs_checkpoint) {
            self.checkpoint_locked(&mut st, &mut FaultCursor { plan: fault, step: 0 })?;
            report.checkpoint_written = true;
        }
        report.elapsed = started.elapsed();
        *self.recovery.lock() = report;
        Ok(())
    }

    /// The newest checkpoint whose block, index files and metadata all load.
    /// `CURRENT` is tried first, then every block file from newest to oldest.
    fn load_latest_checkpoint(&self, names: &[String]) -> Option<LoadedCheckpoint> {
        let mut candidates = Vec::new();
        if let Ok(bytes) = fs::read(self.dir.join(CURRENT_FILE)) {
            if let Ok(name) = checkpoint::decode_pointer(&bytes) {
                candidates.push(name);
            }
        }
        let mut seqs: Vec<u64> = names.iter().filter_map(|n| parse_checkpoint_name(n)).collect();
        seqs.sort_unstable_by(|a, b| b.cmp(a));
        candidates.extend(seqs.into_iter().map(checkpoint_file_name));
        let mut tried = HashSet::new();
        for name in candidates {
            if !tried.insert(name.clone()) {
                continue;
            }
            match self.try_load_checkpoint(&name) {
                Ok(loaded) => return Some(loaded),
                Err(e) => log::warn!("skipping checkpoint {name}: {e}"),
            }
        }
        None
    }

    fn try_load_checkpoint(&self, name: &str) -> Result<LoadedCheckpoint> {
        let block = CheckpointBlock::decode(&fs::read(self.dir.join(name))?)?;
        if checkpoint_file_name(block.seq) != name {
            return Err(Error::Corrupt(format!("{name} holds checkpoint {}", block.seq)));
        }
        let mut indexes = Vec::new();
        for r in &block.index_files {
            let tablet = self.tablet_by_id(r.tablet).ok_or_else(|| Error::Corrupt(format!("unknown tablet {}", r.tablet)))?;
            if !tablet.groups.iter().any(|g| g.name == r.group) {
                return Err(Error::Corrupt(format!("unknown group {} in tablet {}", r.group, r.tablet)));
            }
            let idx = MvIndex::decode(&fs::read(self.dir.join(&r.file))?)?;
            if idx.entry_count() as u64 != r.entries {
                return Err(Error::Corrupt(format!("{} has {} entries, expected {}", r.file, idx.entry_count(), r.entries)));
            }
            indexes.push((r.clone(), idx));
        }
        let meta = match &block.sorted_meta {
            Some(m) => Some((m.clone(), self.load_meta(m)?)),
            None => None,
        };
        Ok((block, indexes, meta))
    }

    fn load_meta(&self, name: &str) -> Result<SortedMeta> {
        let meta = SortedMeta::decode(&fs::read(self.dir.join(name))?)?;
        for seq in meta.segment_seqs() {
            if self.store.segment_len(SegmentId::sorted(seq)).is_none() {
                return Err(Error::MissingSegment(SegmentId::sorted(seq)));
            }
        }
        Ok(meta)
    }

    /// Without a checkpoint, a compaction counts as installed only once the
    /// log below its cut is gone; until then the old log is the truth.
    fn latest_sorted_meta(&self, names: &[String]) -> Option<(String, SortedMeta)> {
        let mut gens: Vec<u64> = names.iter().filter_map(|n| parse_meta_name(n)).collect();
        gens.sort_unstable_by(|a, b| b.cmp(a));
        let valid: Vec<(String, SortedMeta)> =
            gens.into_iter().map(meta_file_name).filter_map(|name| self.load_meta(&name).ok().map(|m| (name, m))).collect();
        let oldest_log = self
            .store
            .list_segments()
            .into_iter()
            .filter(|s| s.kind == SegmentKind::Log)
            .map(|s| s.seq)
            .min()
            .unwrap_or(u64::MAX);
        let installed = valid.iter().position(|(_, m)| m.cut.segment <= oldest_log);
        match installed {
            Some(i) => valid.into_iter().nth(i),
            None if oldest_log == 0 => None,
            None => valid.into_iter().next(),
        }
    }

    /// Indexes the contents of sorted segments.
    fn load_sorted(&self, meta: &SortedMeta) -> Result<()> {
        let mut max_ts = 0;
        for run in &meta.runs {
            let handle = self.table(&run.table)?;
            let gi = handle
                .schema
                .group_index(&run.group)
                .ok_or_else(|| Error::UnknownGroup { table: run.table.clone(), group: run.group.clone() })?;
            for seg in &run.segments {
                for item in self.store.scan_segment(SegmentId::sorted(seg.seq))? {
                    let (addr, payload) = item?;
                    let LogEntry::Stripped { lsn, primary_key, write_ts, value } = LogEntry::decode(&payload)? else {
                        return Err(Error::Corrupt(format!("non-sorted entry in sorted segment {}", seg.seq)));
                    };
                    let tablet = handle
                        .tablets
                        .iter()
                        .find(|t| t.contains(&primary_key))
                        .ok_or(Error::KeyOutOfRange)?;
                    max_ts = max_ts.max(write_ts);
                    let entry = IndexEntry { key: IdxKey { primary_key, ts: write_ts }, addr, lsn, tombstone: value.is_none() };
                    let g = tablet.group(gi);
                    g.index.write().put(entry);
                    g.updates.fetch_add(1, Ordering::AcqRel);
                }
            }
        }
        self.clock.advance_to(max_ts + 1);
        self.committer.set_last_lsn(meta.cut_lsn);
        Ok(())
    }

    /// Deletes files the adopted state does not use: other checkpoints,
    /// unadopted compaction output, and log segments already compacted.
    fn remove_stale_files(&self, names: &[String], keep_ckpt: Option<&HashSet<u64>>, meta: Option<&(String, SortedMeta)>) -> Result<usize> {
        let mut removed = 0;
        for name in names {
            let stale_ckpt = parse_checkpoint_name(name).is_some_and(|s| keep_ckpt.is_none_or(|k| !k.contains(&s)));
            let stale_meta = parse_meta_name(name).is_some() && meta.is_none_or(|(m, _)| m != name);
            if stale_ckpt || stale_meta {
                remove_if_present(&self.dir.join(name))?;
                removed += 1;
            }
        }
        if keep_ckpt.is_none() {
            remove_if_present(&self.dir.join(CURRENT_FILE))?;
        }
        let live_sorted: HashSet<u64> = meta.map(|(_, m)| m.segment_seqs().collect()).unwrap_or_default();
        let cut = meta.map_or(0, |(_, m)| m.cut.segment);
        let doomed: Vec<SegmentId> = self
            .store
            .list_segments()
            .into_iter()
            .filter(|s| match s.kind {
                SegmentKind::Sorted => !live_sorted.contains(&s.seq),
                SegmentKind::Log => s.seq < cut,
            })
            .collect();
        if !doomed.is_empty() {
            removed += doomed.len();
            self.store.remove_segments(&doomed, |_| false)?;
        }
        Ok(removed)
    }

    /// Replays committed entries from `from` to the end of the log.
    fn redo(&self, from: LogPosition, report: &mut RecoveryReport) -> Result<()> {
        struct Pending {
            tablet: Arc<Tablet>,
            group: usize,
            key: Vec<u8>,
            ts: Timestamp,
            addr: LogAddress,
            lsn: Lsn,
            delete: bool,
        }
        let mut tablets: HashMap<TabletId, Arc<Tablet>> = HashMap::new();
        let mut pending: HashMap<TxnId, Vec<Pending>> = HashMap::new();
        let (mut max_lsn, mut max_ts, mut max_txn) = (0, 0, 0);
        let mut scan = self.store.scan(Some(from));
        for item in &mut scan {
            let (addr, payload) = item?;
            report.redo_scanned += 1;
            let entry = EntryHeader::decode(&payload)?;
            max_lsn = max_lsn.max(entry.lsn());
            let (log_key, row_key, txn_id, delete) = match entry {
                EntryHeader::Write { log_key, row_key, txn_id } => (log_key, row_key, txn_id, false),
                EntryHeader::Invalidated { log_key, row_key, txn_id } => (log_key, row_key, txn_id, true),
                EntryHeader::Commit { txn_id, commit_ts, .. } => {
                    max_ts = max_ts.max(commit_ts);
                    max_txn = max_txn.max(txn_id);
                    for p in pending.remove(&txn_id).unwrap_or_default() {
                        let g = p.tablet.group(p.group);
                        if p.delete {
                            g.redo_delete(&p.key, p.ts, p.addr, p.lsn);
                            g.updates.fetch_add(1, Ordering::AcqRel);
                        } else {
                            g.apply_write(&p.key, p.ts, p.addr, p.lsn);
                        }
                        report.redo_applied += 1;
                    }
                    continue;
                }
                EntryHeader::Stripped { .. } => {
                    return Err(Error::Corrupt(format!("sorted entry in log segment at {addr:?}")));
                }
            };
            max_ts = max_ts.max(row_key.write_ts);
            max_txn = max_txn.max(txn_id);
            let tablet = match tablets.get(&log_key.tablet) {
                Some(t) => t.clone(),
                None => {
                    let t = self
                        .tablet_by_id(log_key.tablet)
                        .ok_or_else(|| Error::Corrupt(format!("log names unknown tablet {}", log_key.tablet)))?;
                    tablets.insert(log_key.tablet, t.clone());
                    t
                }
            };
            let group = tablet
                .groups
                .iter()
                .position(|g| g.name == row_key.column_group)
                .ok_or_else(|| Error::UnknownGroup { table: log_key.table.clone(), group: row_key.column_group.clone() })?;
            pending.entry(txn_id).or_default().push(Pending {
                tablet,
                group,
                key: row_key.primary_key,
                ts: row_key.write_ts,
                addr,
                lsn: log_key.lsn,
                delete,
            });
        }
        report.torn_tail = scan.torn_tail();
        report.uncommitted = pending.values().map(|v| v.len() as u64).sum();
        self.clock.advance_to(max_ts + 1);
        self.next_txn.fetch_max(max_txn + 1, Ordering::AcqRel);
        self.committer.set_last_lsn(max_lsn);
        Ok(())
    }
}

pub(crate) fn dir_names(dir: &std::path::Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir)? {
        if let Some(name) = entry?.file_name().to_str() {
            names.push(name.to_string());
        }
    }
    names.sort();
    Ok(names)
}

pub(crate) fn remove_if_present(path: &std::path::Path) -> Result<()> {
    match fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(e.into()),
    }
}

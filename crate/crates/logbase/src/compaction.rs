//! Rewrites the log into sorted segments holding only the versions worth
//! keeping, clustered by (table, column group, key, timestamp).
//!
//! A job cuts the log (new writes go to a fresh segment), copies retained
//! versions out of an index snapshot, and then swaps: index entries at or
//! below the cut are pointed at the sorted copies, a checkpoint is taken and
//! the old segments are deleted.

use std::collections::HashMap;
use std::sync::atomic::Ordering;
use std::time::{Duration, Instant};

use logbase_core::checkpoint::{SortedMeta, SortedRun, SortedSegmentInfo};
use logbase_core::{IndexEntry, LogAddress, LogEntry, LogPosition, Lsn, MvIndex, SegmentId, SegmentKind, Timestamp};

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::recovery::{dir_names, meta_file_name, parse_meta_name, remove_if_present, FaultCursor};
use crate::schema::write_atomic;
use crate::store::SortedWriter;

/// Which versions survive compaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Retention {
    /// Only the newest version of each record.
    #[default]
    LatestOnly,
    /// Every version with timestamp `>= w`, plus the one visible at `w`.
    KeepSince(Timestamp),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CompactionConfig {
    pub retention: Retention,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompactionReport {
    pub generation: u64,
    pub cut: LogPosition,
    pub cut_lsn: Lsn,
    pub input_segments: usize,
    /// Bytes of every input segment.
    pub input_bytes: u64,
    pub output_segments: usize,
    pub output_bytes: u64,
    pub versions_in: u64,
    pub versions_out: u64,
    /// Input bytes minus the input frames of the versions carried over.
    pub reclaimed_bytes: u64,
    pub build_time: Duration,
    pub swap_time: Duration,
}

/// The versions of one key that compaction keeps, oldest first. Deletes
/// drop all older versions, so tombstones can only lead the list; a leading
/// tombstone answers the same as no version at all and is dropped too.
pub fn retained_versions(versions: &[IndexEntry], retention: Retention) -> &[IndexEntry] {
    let from = match retention {
        Retention::LatestOnly => versions.len().saturating_sub(1),
        Retention::KeepSince(w) => versions.partition_point(|e| e.ts() <= w).saturating_sub(1),
    };
    let mut kept = &versions[from..];
    while kept.first().is_some_and(|e| e.tombstone) {
        kept = &kept[1..];
    }
    kept
}

fn retained_bytes(index: &MvIndex, retention: Retention) -> (u64, u64, u64) {
    let (mut bytes, mut versions_in, mut versions_out) = (0, 0, 0);
    for key in index.keys() {
        let versions = index.versions(key);
        versions_in += versions.len() as u64;
        for e in retained_versions(&versions, retention) {
            bytes += u64::from(e.addr.length);
            versions_out += 1;
        }
    }
    (bytes, versions_in, versions_out)
}

/// A finished but not yet installed compaction. Dropping it without calling
/// [`swap`](Self::swap) discards the output.
pub struct CompactionJob<'a> {
    engine: &'a Engine,
    meta_name: String,
    meta: Option<SortedMeta>,
    relocation: HashMap<LogAddress, LogAddress>,
    inputs: Vec<SegmentId>,
    outputs: Vec<SegmentId>,
    report: CompactionReport,
    swapped: bool,
}

impl std::fmt::Debug for CompactionJob<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompactionJob").field("meta", &self.meta_name).field("swapped", &self.swapped).finish()
    }
}

impl Engine {
    pub fn compact(&self, config: CompactionConfig) -> Result<CompactionReport> {
        self.begin_compaction(config)?.swap()
    }

    /// Bytes a compaction with `retention` would free right now.
    pub fn estimate_reclaim(&self, retention: Retention) -> u64 {
        let sorted: Vec<u64> = self.meta.read().as_ref().map(|(_, m)| m.segment_seqs().collect()).unwrap_or_default();
        let input: u64 = self
            .store
            .list_segments()
            .into_iter()
            .filter(|s| s.kind == SegmentKind::Log || sorted.contains(&s.seq))
            .filter_map(|s| self.store.segment_len(s))
            .sum();
        let kept: u64 = self
            .all_tablets()
            .iter()
            .flat_map(|(_, t)| t.groups.iter())
            .map(|g| retained_bytes(&g.index.read(), retention).0)
            .sum();
        input.saturating_sub(kept)
    }

    /// Cuts the log and writes the sorted output. Serving continues; call
    /// [`CompactionJob::swap`] to install the result.
    pub fn begin_compaction(&self, config: CompactionConfig) -> Result<CompactionJob<'_>> {
        if self.compacting.swap(true, Ordering::AcqRel) {
            return Err(Error::CompactionInProgress);
        }
        let started = Instant::now();
        let mut job = CompactionJob {
            engine: self,
            meta_name: String::new(),
            meta: None,
            relocation: HashMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            report: CompactionReport::default(),
            swapped: false,
        };

        let previous = self.meta.read().as_ref().map(|(_, m)| m.clone());
        let (cut, cut_lsn, snapshot) = {
            let _gate = self.gate.write();
            let active = self.store.seal_and_roll()?;
            let snapshot: Vec<_> = self
                .all_tablets()
                .into_iter()
                .map(|(schema, t)| {
                    let groups: Vec<MvIndex> = t.groups.iter().map(|g| g.index.read().clone()).collect();
                    (schema, t, groups)
                })
                .collect();
            (LogPosition { segment: active.seq, offset: 0 }, self.committer.last_lsn(), snapshot)
        };
        job.inputs = self
            .store
            .list_segments()
            .into_iter()
            .filter(|s| match s.kind {
                SegmentKind::Log => s.seq < cut.segment,
                SegmentKind::Sorted => previous.as_ref().is_some_and(|m| m.segment_seqs().any(|q| q == s.seq)),
            })
            .collect();
        job.report.cut = cut;
        job.report.cut_lsn = cut_lsn;
        job.report.input_segments = job.inputs.len();
        job.report.input_bytes = job.inputs.iter().filter_map(|&s| self.store.segment_len(s)).sum();

        // One run per (table, group), in sort order.
        let mut runs: Vec<(String, String, Vec<&MvIndex>)> = Vec::new();
        for (schema, _, groups) in &snapshot {
            for (gi, g) in schema.groups.iter().enumerate() {
                match runs.iter_mut().find(|(t, n, _)| t == &schema.name && n == &g.name) {
                    Some(run) => run.2.push(&groups[gi]),
                    None => runs.push((schema.name.clone(), g.name.clone(), vec![&groups[gi]])),
                }
            }
        }
        // Tablets were listed in key order within each table.
        runs.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));

        let retention = config.retention;
        let mut kept_bytes = 0u64;
        let mut meta_runs = Vec::new();
        for (table, group, indexes) in runs {
            let mut run = SortedRun { table, group, segments: Vec::new() };
            let mut writer: Option<(SortedWriter<'_>, SortedSegmentInfo)> = None;
            for index in indexes {
                for key in index.keys() {
                    let versions = index.versions(key);
                    job.report.versions_in += versions.len() as u64;
                    for e in retained_versions(&versions, retention) {
                        let value = if e.tombstone { None } else { self.fetch(e.addr)? };
                        let entry = LogEntry::Stripped { lsn: e.lsn, primary_key: key.to_vec(), write_ts: e.ts(), value };
                        let payload = entry.encode();
                        if writer.as_ref().is_none_or(|(w, _)| !w.fits(payload.len())) {
                            if let Some((w, info)) = writer.take() {
                                w.finish()?;
                                run.segments.push(info);
                            }
                            let w = self.store.create_sorted()?;
                            job.outputs.push(w.id());
                            let info = SortedSegmentInfo { seq: w.id().seq, entries: 0, first_key: key.to_vec(), last_key: Vec::new() };
                            writer = Some((w, info));
                        }
                        let (w, info) = writer.as_mut().expect("writer opened above");
                        let new_addr = w.append(&payload)?;
                        info.entries += 1;
                        info.last_key = key.to_vec();
                        job.relocation.insert(e.addr, new_addr);
                        kept_bytes += u64::from(e.addr.length);
                        job.report.versions_out += 1;
                        job.report.output_bytes += u64::from(new_addr.length);
                    }
                }
            }
            if let Some((w, info)) = writer.take() {
                w.finish()?;
                run.segments.push(info);
            }
            if !run.segments.is_empty() {
                meta_runs.push(run);
            }
        }
        job.report.output_segments = job.outputs.len();
        job.report.reclaimed_bytes = job.report.input_bytes.saturating_sub(kept_bytes);

        let generation = previous.as_ref().map_or(0, |m| m.generation + 1).max(
            dir_names(&self.dir)?
                .iter()
                .filter_map(|n| parse_meta_name(n))
                .max()
                .map_or(0, |g| g + 1),
        );
        let meta = SortedMeta { generation, cut, cut_lsn, runs: meta_runs };
        job.meta_name = meta_file_name(generation);
        write_atomic(&self.dir, &job.meta_name, &meta.encode())?;
        job.report.generation = generation;
        job.meta = Some(meta);
        job.report.build_time = started.elapsed();
        Ok(job)
    }
}

impl CompactionJob<'_> {
    pub fn report(&self) -> &CompactionReport {
        &self.report
    }

    /// Installs the output. Readers see either the old or the new layout.
    pub fn swap(&mut self) -> Result<CompactionReport> {
        if self.swapped {
            return Err(Error::AlreadySwapped);
        }
        let started = Instant::now();
        let engine = self.engine;
        let cut_lsn = self.report.cut_lsn;
        let meta = self.meta.take().ok_or(Error::AlreadySwapped)?;
        let mut st = engine.ckpt.lock();
        {
            let _gate = engine.gate.write();
            for (_, tablet) in engine.all_tablets() {
                for g in &tablet.groups {
                    g.index.write().retain_map(|_, e| {
                        if e.lsn > cut_lsn {
                            Some(e.addr)
                        } else {
                            self.relocation.get(&e.addr).copied()
                        }
                    });
                }
            }
            // Persisted indexes point into the old segments.
            st.flushed.clear();
            *engine.meta.write() = Some((self.meta_name.clone(), meta));
        }
        self.swapped = true;
        engine.checkpoint_locked(&mut st, &mut FaultCursor::none())?;
        drop(st);
        {
            let _reclaim = engine.reclaim.write();
            engine.store.remove_segments(&self.inputs, |_| false)?;
        }
        engine.compacting.store(false, Ordering::Release);
        self.report.swap_time = started.elapsed();
        Ok(self.report.clone())
    }
}

impl Drop for CompactionJob<'_> {
    fn drop(&mut self) {
        if !self.swapped {
            if !self.outputs.is_empty() {
                if let Err(e) = self.engine.store.remove_segments(&self.outputs, |_| false) {
                    log::warn!("could not discard compaction output: {e}");
                }
            }
            if !self.meta_name.is_empty() {
                let _ = remove_if_present(&self.engine.dir.join(&self.meta_name));
            }
        }
        self.engine.compacting.store(false, Ordering::Release);
    }
}

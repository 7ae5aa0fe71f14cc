//! Segmented append-only log over a directory.
//!
//! The log is a sequence of fixed-capacity segment files named
//! `{seq:016}.log`. Compaction output goes to `{seq:016}.sorted` files drawn
//! from the same sequence counter. Every record is stored as a frame (see
//! [`logbase_core::frame`]); an entry never spans two segments.
//!
//! Appends are serialized internally. Reads use positional IO and may run
//! concurrently with appends.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use logbase_core::frame::{self, Frame, FRAME_OVERHEAD};
use logbase_core::{LogAddress, LogPosition, SegmentId, SegmentKind};
use parking_lot::{Mutex, RwLock};

use crate::error::{Error, Result};

pub const DEFAULT_SEGMENT_CAPACITY: u64 = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncPolicy {
    /// fsync after every frame.
    EveryAppend,
    /// fsync once per [`SegmentStore::append_batch`] or explicit [`SegmentStore::sync`].
    EveryBatch,
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub segment_capacity: u64,
    pub sync_policy: SyncPolicy,
    /// Number of simulated replicas each byte is written to.
    pub replication_factor: u32,
    /// Upper bound on total bytes across live segments.
    pub capacity_limit: Option<u64>,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            segment_capacity: DEFAULT_SEGMENT_CAPACITY,
            sync_policy: SyncPolicy::EveryBatch,
            replication_factor: 3,
            capacity_limit: None,
        }
    }
}

impl StoreConfig {
    pub fn with_segment_capacity(mut self, bytes: u64) -> Self {
        self.segment_capacity = bytes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_capacity <= FRAME_OVERHEAD as u64 {
            return Err(Error::InvalidConfig(format!(
                "segment capacity {} leaves no room for a frame",
                self.segment_capacity
            )));
        }
        if self.replication_factor == 0 {
            return Err(Error::InvalidConfig("replication factor must be at least 1".into()));
        }
        Ok(())
    }

    /// Largest payload a single frame may carry.
    pub fn max_payload(&self) -> usize {
        (self.segment_capacity as usize).saturating_sub(FRAME_OVERHEAD)
    }
}

/// Monotonic IO counters.
#[derive(Debug, Default)]
pub struct StoreStats {
    appends: AtomicU64,
    bytes_appended: AtomicU64,
    syncs: AtomicU64,
    reads: AtomicU64,
    bytes_read: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StatsSnapshot {
    pub appends: u64,
    pub bytes_appended: u64,
    pub syncs: u64,
    pub reads: u64,
    pub bytes_read: u64,
}

impl StatsSnapshot {
    pub fn since(&self, earlier: &StatsSnapshot) -> StatsSnapshot {
        StatsSnapshot {
            appends: self.appends - earlier.appends,
            bytes_appended: self.bytes_appended - earlier.bytes_appended,
            syncs: self.syncs - earlier.syncs,
            reads: self.reads - earlier.reads,
            bytes_read: self.bytes_read - earlier.bytes_read,
        }
    }
}

struct Segment {
    id: SegmentId,
    file: Arc<File>,
    /// Bytes of complete frames; reads past this are rejected.
    len: AtomicU64,
}

struct Appender {
    active: SegmentId,
    file: Arc<File>,
    len: u64,
    /// Torn bytes after `len` left by a crash; cut off before the next append.
    torn: bool,
    /// Sealed files written since the last sync.
    unsynced: Vec<Arc<File>>,
    dirty: bool,
    next_seq: u64,
    closed: bool,
}

pub struct SegmentStore {
    dir: PathBuf,
    config: StoreConfig,
    appender: Mutex<Appender>,
    segments: RwLock<BTreeMap<u64, Arc<Segment>>>,
    stats: StoreStats,
    read_trace: Mutex<Option<Vec<LogAddress>>>,
}

impl std::fmt::Debug for SegmentStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SegmentStore").field("dir", &self.dir).finish_non_exhaustive()
    }
}

fn segment_path(dir: &Path, id: SegmentId) -> PathBuf {
    dir.join(id.to_string())
}

fn parse_segment_name(name: &str) -> Option<SegmentId> {
    let (seq, suffix) = name.split_once('.')?;
    if seq.len() != 16 {
        return None;
    }
    let seq = seq.parse().ok()?;
    match suffix {
        "log" => Some(SegmentId::log(seq)),
        "sorted" => Some(SegmentId::sorted(seq)),
        _ => None,
    }
}

/// Segment files present in `dir`, ascending by sequence number.
pub fn list_segment_files(dir: &Path) -> Result<Vec<SegmentId>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if let Some(id) = entry.file_name().to_str().and_then(parse_segment_name) {
            ids.push(id);
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn sync_dir(dir: &Path) -> Result<()> {
    File::open(dir)?.sync_all()?;
    Ok(())
}

/// Length of the valid frame prefix of `buf` and whether bytes follow it.
fn valid_prefix(buf: &[u8]) -> std::result::Result<(u64, bool), u64> {
    let mut pos = 0usize;
    while pos < buf.len() {
        match frame::decode_frame(&buf[pos..]) {
            Frame::Complete { frame_len, .. } => pos += frame_len,
            Frame::Incomplete => return Ok((pos as u64, true)),
            Frame::Corrupt => return Err(pos as u64),
        }
    }
    Ok((pos as u64, false))
}

impl SegmentStore {
    /// Opens or creates a store in `dir`. A partially written frame at the end
    /// of the newest log segment is tolerated and reported by [`scan`](Self::scan)
    /// until the next append cuts it off.
    pub fn open(dir: impl AsRef<Path>, config: StoreConfig) -> Result<Self> {
        config.validate()?;
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;

        let ids = list_segment_files(&dir)?;
        let mut segments = BTreeMap::new();
        for id in &ids {
            let file = File::open(segment_path(&dir, *id))?;
            let len = file.metadata()?.len();
            segments.insert(id.seq, Arc::new(Segment { id: *id, file: Arc::new(file), len: AtomicU64::new(len) }));
        }
        let next_seq = ids.last().map_or(0, |id| id.seq + 1);

        let last_log = ids.iter().rev().find(|id| id.kind == SegmentKind::Log).copied();
        let appender = match last_log {
            Some(id) => {
                let file = OpenOptions::new().read(true).write(true).open(segment_path(&dir, id))?;
                let mut buf = Vec::new();
                (&file).read_to_end(&mut buf)?;
                let (valid, torn) =
                    valid_prefix(&buf).map_err(|offset| Error::ChecksumMismatch { segment: id, offset })?;
                let file = Arc::new(file);
                let seg = Arc::new(Segment { id, file: file.clone(), len: AtomicU64::new(valid) });
                segments.insert(id.seq, seg);
                Appender {
                    active: id,
                    file,
                    len: valid,
                    torn,
                    unsynced: Vec::new(),
                    dirty: false,
                    next_seq,
                    closed: false,
                }
            }
            None => {
                let id = SegmentId::log(next_seq);
                let file = Arc::new(Self::create_file(&dir, id)?);
                segments.insert(id.seq, Arc::new(Segment { id, file: file.clone(), len: AtomicU64::new(0) }));
                Appender {
                    active: id,
                    file,
                    len: 0,
                    torn: false,
                    unsynced: Vec::new(),
                    dirty: false,
                    next_seq: next_seq + 1,
                    closed: false,
                }
            }
        };

        Ok(SegmentStore {
            dir,
            config,
            appender: Mutex::new(appender),
            segments: RwLock::new(segments),
            stats: StoreStats::default(),
            read_trace: Mutex::new(None),
        })
    }

    fn create_file(dir: &Path, id: SegmentId) -> Result<File> {
        let file = OpenOptions::new().read(true).write(true).create_new(true).open(segment_path(dir, id))?;
        sync_dir(dir)?;
        Ok(file)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn append(&self, payload: &[u8]) -> Result<LogAddress> {
        let mut app = self.appender.lock();
        let addr = self.append_locked(&mut app, payload)?;
        if self.config.sync_policy == SyncPolicy::EveryBatch {
            // Single appends are their own batch.
            self.sync_locked(&mut app)?;
        }
        Ok(addr)
    }

    /// Appends all payloads contiguously (rolling segments as needed) and
    /// syncs once before returning.
    pub fn append_batch<P: AsRef<[u8]>>(&self, payloads: &[P]) -> Result<Vec<LogAddress>> {
        let mut app = self.appender.lock();
        let mut out = Vec::with_capacity(payloads.len());
        for p in payloads {
            out.push(self.append_locked(&mut app, p.as_ref())?);
        }
        self.sync_locked(&mut app)?;
        Ok(out)
    }

    fn check_payload(&self, len: usize) -> Result<()> {
        if len == 0 {
            return Err(Error::InvalidConfig("empty payloads cannot be framed".into()));
        }
        if len > self.config.max_payload() {
            return Err(Error::PayloadTooLarge { len, limit: self.config.max_payload() });
        }
        Ok(())
    }

    fn check_capacity(&self, extra: u64) -> Result<()> {
        if let Some(limit) = self.config.capacity_limit {
            let used = self.total_bytes();
            if used + extra > limit {
                return Err(Error::StorageFull { needed: extra, limit });
            }
        }
        Ok(())
    }

    fn append_locked(&self, app: &mut Appender, payload: &[u8]) -> Result<LogAddress> {
        if app.closed {
            return Err(Error::StoreClosed);
        }
        self.check_payload(payload.len())?;
        let flen = frame::frame_len(payload.len()) as u64;
        self.check_capacity(flen)?;

        if app.torn {
            app.file.set_len(app.len)?;
            app.file.sync_data()?;
            app.torn = false;
        }
        if app.len + flen > self.config.segment_capacity {
            self.roll_locked(app)?;
        }

        let bytes = frame::encode_frame(payload);
        app.file.write_all_at(&bytes, app.len)?;
        let addr = LogAddress { segment: app.active, offset: app.len, length: flen as u32 };
        app.len += flen;
        app.dirty = true;
        if let Some(seg) = self.segments.read().get(&app.active.seq) {
            seg.len.store(app.len, Ordering::Release);
        }
        self.stats.appends.fetch_add(1, Ordering::Relaxed);
        self.stats.bytes_appended.fetch_add(flen, Ordering::Relaxed);
        if self.config.sync_policy == SyncPolicy::EveryAppend {
            self.sync_locked(app)?;
        }
        Ok(addr)
    }

    fn roll_locked(&self, app: &mut Appender) -> Result<SegmentId> {
        let id = SegmentId::log(app.next_seq);
        let file = Arc::new(Self::create_file(&self.dir, id)?);
        app.next_seq += 1;
        let old = std::mem::replace(&mut app.file, file.clone());
        if app.dirty {
            app.unsynced.push(old);
        }
        app.active = id;
        app.len = 0;
        self.segments
            .write()
            .insert(id.seq, Arc::new(Segment { id, file, len: AtomicU64::new(0) }));
        Ok(id)
    }

    fn sync_locked(&self, app: &mut Appender) -> Result<()> {
        if !app.dirty && app.unsynced.is_empty() {
            return Ok(());
        }
        for f in app.unsynced.drain(..) {
            f.sync_data()?;
        }
        app.file.sync_data()?;
        app.dirty = false;
        self.stats.syncs.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    pub fn sync(&self) -> Result<()> {
        let mut app = self.appender.lock();
        self.sync_locked(&mut app)
    }

    /// Seals the active segment and starts a new one. Returns the new segment.
    pub fn seal_and_roll(&self) -> Result<SegmentId> {
        let mut app = self.appender.lock();
        if app.closed {
            return Err(Error::StoreClosed);
        }
        if app.torn {
            app.file.set_len(app.len)?;
            app.torn = false;
        }
        app.dirty = true;
        let id = self.roll_locked(&mut app)?;
        self.sync_locked(&mut app)?;
        Ok(id)
    }

    /// Position right after the last complete frame of the active log.
    pub fn end_position(&self) -> LogPosition {
        let app = self.appender.lock();
        LogPosition { segment: app.active.seq, offset: app.len }
    }

    pub fn active_segment(&self) -> SegmentId {
        self.appender.lock().active
    }

    pub fn read(&self, addr: LogAddress) -> Result<Vec<u8>> {
        let seg = self
            .segments
            .read()
            .get(&addr.segment.seq)
            .filter(|s| s.id == addr.segment)
            .cloned()
            .ok_or(Error::MissingSegment(addr.segment))?;
        if (addr.length as usize) <= FRAME_OVERHEAD || addr.end() > seg.len.load(Ordering::Acquire) {
            return Err(Error::AddressOutOfRange(addr));
        }
        let mut buf = vec![0u8; addr.length as usize];
        seg.file.read_exact_at(&mut buf, addr.offset)?;
        self.stats.reads.fetch_add(1, Ordering::Relaxed);
        self.stats.bytes_read.fetch_add(u64::from(addr.length), Ordering::Relaxed);
        if let Some(trace) = self.read_trace.lock().as_mut() {
            trace.push(addr);
        }

        let mut header = [0u8; FRAME_OVERHEAD];
        header.copy_from_slice(&buf[..FRAME_OVERHEAD]);
        let (len, crc) = frame::decode_header(&header);
        if len as usize + FRAME_OVERHEAD != buf.len() {
            return Err(Error::AddressOutOfRange(addr));
        }
        buf.drain(..FRAME_OVERHEAD);
        if frame::checksum(&buf) != crc {
            return Err(Error::ChecksumMismatch { segment: addr.segment, offset: addr.offset });
        }
        Ok(buf)
    }

    /// All segments, ascending.
    pub fn list_segments(&self) -> Vec<SegmentId> {
        self.segments.read().values().map(|s| s.id).collect()
    }

    pub fn log_segments(&self) -> Vec<SegmentId> {
        self.list_segments().into_iter().filter(|s| s.kind == SegmentKind::Log).collect()
    }

    pub fn segment_len(&self, id: SegmentId) -> Option<u64> {
        self.segments.read().get(&id.seq).filter(|s| s.id == id).map(|s| s.len.load(Ordering::Acquire))
    }

    pub fn total_bytes(&self) -> u64 {
        self.segments.read().values().map(|s| s.len.load(Ordering::Acquire)).sum()
    }

    /// Deletes sealed segments. `referenced` is asked about every id and must
    /// return true for segments that an index or checkpoint still points into.
    pub fn remove_segments<F>(&self, ids: &[SegmentId], referenced: F) -> Result<()>
    where
        F: Fn(SegmentId) -> bool,
    {
        let active = self.active_segment();
        for &id in ids {
            if id == active || referenced(id) {
                return Err(Error::SegmentInUse(id));
            }
            if self.segment_len(id).is_none() {
                return Err(Error::MissingSegment(id));
            }
        }
        let mut segs = self.segments.write();
        for &id in ids {
            segs.remove(&id.seq);
            fs::remove_file(segment_path(&self.dir, id))?;
        }
        drop(segs);
        sync_dir(&self.dir)
    }

    /// Starts or stops recording the address of every [`read`](Self::read).
    pub fn trace_reads(&self, on: bool) {
        *self.read_trace.lock() = on.then(Vec::new);
    }

    pub fn take_read_trace(&self) -> Vec<LogAddress> {
        self.read_trace.lock().as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Byte offset of `pos` if the log segments were laid end to end.
    pub fn global_offset(&self, pos: LogPosition) -> u64 {
        let segs = self.segments.read();
        let before: u64 = segs
            .range(..pos.segment)
            .filter(|(_, s)| s.id.kind == SegmentKind::Log)
            .map(|(_, s)| s.len.load(Ordering::Acquire))
            .sum();
        before + pos.offset
    }

    pub fn stats(&self) -> StatsSnapshot {
        StatsSnapshot {
            appends: self.stats.appends.load(Ordering::Relaxed),
            bytes_appended: self.stats.bytes_appended.load(Ordering::Relaxed),
            syncs: self.stats.syncs.load(Ordering::Relaxed),
            reads: self.stats.reads.load(Ordering::Relaxed),
            bytes_read: self.stats.bytes_read.load(Ordering::Relaxed),
        }
    }

    /// Frame bytes written so far, multiplied by the replication factor.
    pub fn bytes_written_total(&self) -> u64 {
        self.stats.bytes_appended.load(Ordering::Relaxed) * u64::from(self.config.replication_factor)
    }

    pub fn close(&self) -> Result<()> {
        let mut app = self.appender.lock();
        if app.closed {
            return Ok(());
        }
        self.sync_locked(&mut app)?;
        app.closed = true;
        Ok(())
    }

    /// Iterates the log segments from `from` (or the start of the log) in order.
    pub fn scan(&self, from: Option<LogPosition>) -> Scan<'_> {
        let from = from.unwrap_or(LogPosition::START);
        let segments: Vec<Arc<Segment>> = self
            .segments
            .read()
            .range(from.segment..)
            .map(|(_, s)| s.clone())
            .filter(|s| s.id.kind == SegmentKind::Log)
            .collect();
        Scan { store: self, segments, index: 0, from, buf: Vec::new(), base: 0, pos: 0, torn: None, failed: false }
    }

    /// Iterates one segment (of either kind) from its start.
    pub fn scan_segment(&self, id: SegmentId) -> Result<Scan<'_>> {
        let seg = self
            .segments
            .read()
            .get(&id.seq)
            .filter(|s| s.id == id)
            .cloned()
            .ok_or(Error::MissingSegment(id))?;
        Ok(Scan {
            store: self,
            segments: vec![seg],
            index: 0,
            from: LogPosition { segment: id.seq, offset: 0 },
            buf: Vec::new(),
            base: 0,
            pos: 0,
            torn: None,
            failed: false,
        })
    }

    fn torn_pending(&self, id: SegmentId) -> bool {
        let app = self.appender.lock();
        app.torn && app.active == id
    }

    /// Opens a new sorted segment for compaction output.
    pub fn create_sorted(&self) -> Result<SortedWriter<'_>> {
        let id = {
            let mut app = self.appender.lock();
            let id = SegmentId::sorted(app.next_seq);
            app.next_seq += 1;
            id
        };
        let file = Arc::new(Self::create_file(&self.dir, id)?);
        let seg = Arc::new(Segment { id, file, len: AtomicU64::new(0) });
        self.segments.write().insert(id.seq, seg.clone());
        Ok(SortedWriter { store: self, seg, len: 0 })
    }
}

/// Forward iterator over frames.
///
/// A partial frame at the very end of the newest log segment ends iteration
/// without an error; [`Scan::torn_tail`] then reports where it starts. A bad
/// checksum anywhere else is returned as an error.
pub struct Scan<'a> {
    store: &'a SegmentStore,
    segments: Vec<Arc<Segment>>,
    index: usize,
    from: LogPosition,
    buf: Vec<u8>,
    /// File offset of `buf[0]`.
    base: u64,
    pos: usize,
    torn: Option<LogPosition>,
    failed: bool,
}

impl Scan<'_> {
    pub fn torn_tail(&self) -> Option<LogPosition> {
        self.torn
    }

    fn load(&mut self) -> Result<()> {
        let seg = &self.segments[self.index];
        let base = if seg.id.seq == self.from.segment { self.from.offset } else { 0 };
        // Read whatever is on disk, including a torn tail the appender has not cut yet.
        let mut file = File::open(segment_path(&self.store.dir, seg.id))?;
        let mut buf = Vec::with_capacity(file.metadata()?.len().saturating_sub(base) as usize);
        file.seek(SeekFrom::Start(base))?;
        file.read_to_end(&mut buf)?;
        if !self.store.torn_pending(seg.id) {
            // Only frames completed before this point; appends may be in flight.
            buf.truncate(seg.len.load(Ordering::Acquire).saturating_sub(base) as usize);
        }
        self.store.stats.bytes_read.fetch_add(buf.len() as u64, Ordering::Relaxed);
        self.base = base;
        self.pos = 0;
        self.buf = buf;
        Ok(())
    }

    fn is_last_log_segment(&self, id: SegmentId) -> bool {
        id.kind == SegmentKind::Log && self.store.active_segment() == id
    }
}

impl Iterator for Scan<'_> {
    type Item = Result<(LogAddress, Vec<u8>)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.torn.is_some() {
            return None;
        }
        loop {
            if self.index >= self.segments.len() {
                return None;
            }
            if self.pos == 0 && self.buf.is_empty() {
                if let Err(e) = self.load() {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
            let id = self.segments[self.index].id;
            if self.pos >= self.buf.len() {
                self.index += 1;
                self.buf.clear();
                self.pos = 0;
                continue;
            }
            match frame::decode_frame(&self.buf[self.pos..]) {
                Frame::Complete { payload, frame_len } => {
                    let addr = LogAddress { segment: id, offset: self.base + self.pos as u64, length: frame_len as u32 };
                    let payload = payload.to_vec();
                    self.pos += frame_len;
                    return Some(Ok((addr, payload)));
                }
                Frame::Incomplete if self.is_last_log_segment(id) => {
                    self.torn = Some(LogPosition { segment: id.seq, offset: self.base + self.pos as u64 });
                    return None;
                }
                Frame::Incomplete => {
                    self.failed = true;
                    return Some(Err(Error::Corrupt(format!(
                        "incomplete frame at offset {} of sealed segment {id}",
                        self.base + self.pos as u64
                    ))));
                }
                Frame::Corrupt => {
                    self.failed = true;
                    return Some(Err(Error::ChecksumMismatch { segment: id, offset: self.base + self.pos as u64 }));
                }
            }
        }
    }
}

/// Append handle for one sorted segment.
pub struct SortedWriter<'a> {
    store: &'a SegmentStore,
    seg: Arc<Segment>,
    len: u64,
}

impl SortedWriter<'_> {
    pub fn id(&self) -> SegmentId {
        self.seg.id
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Whether a payload of `payload_len` bytes still fits.
    pub fn fits(&self, payload_len: usize) -> bool {
        self.len + frame::frame_len(payload_len) as u64 <= self.store.config.segment_capacity
    }

    pub fn append(&mut self, payload: &[u8]) -> Result<LogAddress> {
        self.store.check_payload(payload.len())?;
        if !self.fits(payload.len()) {
            return Err(Error::PayloadTooLarge { len: payload.len(), limit: self.store.config.max_payload() });
        }
        let flen = frame::frame_len(payload.len()) as u64;
        self.store.check_capacity(flen)?;
        self.seg.file.write_all_at(&frame::encode_frame(payload), self.len)?;
        let addr = LogAddress { segment: self.seg.id, offset: self.len, length: flen as u32 };
        self.len += flen;
        self.seg.len.store(self.len, Ordering::Release);
        self.store.stats.appends.fetch_add(1, Ordering::Relaxed);
        self.store.stats.bytes_appended.fetch_add(flen, Ordering::Relaxed);
        Ok(addr)
    }

    /// Syncs and seals the segment.
    pub fn finish(self) -> Result<SegmentId> {
        self.seg.file.sync_data()?;
        self.store.stats.syncs.fetch_add(1, Ordering::Relaxed);
        Ok(self.seg.id)
    }
}

//! Reference engine with the conventional split between a write-ahead log
//! and data files: writes go to the WAL and a sorted in-memory buffer, which
//! is written out as an immutable data file with a sparse block index when it
//! outgrows its byte budget.
//!
//! WAL record payload (framed like the main log):
//! `ts u64 | key_len u32 | key | tombstone u8 | value_len u32 | value`.
//!
//! Data file: a run of blocks, each a sequence of
//! `key_len u32 | key | ts u64 | tombstone u8 | value_len u32 | value`
//! in key order, followed by the sparse index (`count u32`, then per block
//! `key_len u32 | first_key | offset u64 | len u32`) and a 16-byte footer
//! holding the index offset and the largest timestamp in the file.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::num::NonZeroUsize;
use std::ops::Bound;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use logbase_core::frame::{decode_frame, encode_frame, Frame};
use lru::LruCache;
use parking_lot::{Mutex, RwLock};

use crate::error::{Error, Result};
use crate::schema::write_atomic;

/// Decoded blocks keyed by (file id, block number).
type BlockCache = LruCache<(u64, usize), Arc<Vec<u8>>>;

const RECORD_OVERHEAD: usize = 4 + 8 + 1 + 4;

#[derive(Debug, Clone)]
pub struct BaselineConfig {
    /// In-memory buffer budget in bytes of encoded records.
    pub memtable_bytes: usize,
    pub block_bytes: usize,
    /// Block cache capacity in blocks; 0 disables it.
    pub cache_blocks: usize,
    /// fsync the WAL after every write.
    pub sync_wal: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { memtable_bytes: 4 << 20, block_bytes: 64 << 10, cache_blocks: 0, sync_wal: true }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BaselineStats {
    pub wal_bytes: u64,
    pub data_bytes: u64,
    pub block_reads: u64,
    pub cache_hits: u64,
    pub flushes: u64,
    pub syncs: u64,
}

impl BaselineStats {
    pub fn bytes_written(&self) -> u64 {
        self.wal_bytes + self.data_bytes
    }
}

#[derive(Default)]
struct Counters {
    wal_bytes: AtomicU64,
    data_bytes: AtomicU64,
    block_reads: AtomicU64,
    cache_hits: AtomicU64,
    flushes: AtomicU64,
    syncs: AtomicU64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Version {
    ts: u64,
    value: Option<Vec<u8>>,
}

fn record_size(key: &[u8], v: &Version) -> usize {
    RECORD_OVERHEAD + key.len() + v.value.as_ref().map_or(0, Vec::len)
}

#[derive(Default)]
struct MemBuffer {
    map: BTreeMap<Vec<u8>, Version>,
    bytes: usize,
}

impl MemBuffer {
    fn insert(&mut self, key: Vec<u8>, v: Version) {
        let add = record_size(&key, &v);
        if let Some(old) = self.map.insert(key.clone(), v) {
            self.bytes -= record_size(&key, &old);
        }
        self.bytes += add;
    }
}

struct BlockRef {
    first_key: Vec<u8>,
    offset: u64,
    len: u32,
}

struct DataFile {
    id: u64,
    path: PathBuf,
    blocks: Vec<BlockRef>,
    last_key: Vec<u8>,
    max_ts: u64,
}

impl DataFile {
    /// Block that would hold `key`, if the file's range covers it.
    fn block_for(&self, key: &[u8]) -> Option<usize> {
        if self.blocks.is_empty() || key > self.last_key.as_slice() {
            return None;
        }
        self.blocks.partition_point(|b| b.first_key.as_slice() <= key).checked_sub(1)
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

fn encode_record(out: &mut Vec<u8>, key: &[u8], v: &Version) {
    put_bytes(out, key);
    out.extend_from_slice(&v.ts.to_le_bytes());
    out.push(u8::from(v.value.is_none()));
    put_bytes(out, v.value.as_deref().unwrap_or_default());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + n).ok_or_else(|| Error::Corrupt("truncated baseline record".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn done(&self) -> bool {
        self.pos >= self.buf.len()
    }
}

fn decode_record(c: &mut Cursor<'_>) -> Result<(Vec<u8>, Version)> {
    let key = c.bytes()?.to_vec();
    let ts = c.u64()?;
    let tombstone = c.take(1)?[0] != 0;
    let value = c.bytes()?.to_vec();
    Ok((key, Version { ts, value: (!tombstone).then_some(value) }))
}

fn encode_wal(key: &[u8], v: &Version) -> Vec<u8> {
    let mut p = Vec::with_capacity(record_size(key, v));
    p.extend_from_slice(&v.ts.to_le_bytes());
    put_bytes(&mut p, key);
    p.push(u8::from(v.value.is_none()));
    put_bytes(&mut p, v.value.as_deref().unwrap_or_default());
    p
}

fn decode_wal(payload: &[u8]) -> Result<(Vec<u8>, Version)> {
    let mut c = Cursor { buf: payload, pos: 0 };
    let ts = c.u64()?;
    let key = c.bytes()?.to_vec();
    let tombstone = c.take(1)?[0] != 0;
    let value = c.bytes()?.to_vec();
    Ok((key, Version { ts, value: (!tombstone).then_some(value) }))
}

fn data_name(id: u64) -> String {
    format!("data-{id:016}.dat")
}

fn wal_name(id: u64) -> String {
    format!("wal-{id:016}.wal")
}

fn parse_name(name: &str, prefix: &str, suffix: &str) -> Option<u64> {
    name.strip_prefix(prefix)?.strip_suffix(suffix)?.parse().ok()
}

struct Wal {
    id: u64,
    file: File,
}

pub struct BaselineEngine {
    dir: PathBuf,
    config: BaselineConfig,
    wal: Mutex<Wal>,
    mem: RwLock<MemBuffer>,
    /// Oldest first.
    files: RwLock<Vec<Arc<DataFile>>>,
    cache: Option<Mutex<BlockCache>>,
    next_ts: AtomicU64,
    counters: Counters,
}

impl std::fmt::Debug for BaselineEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BaselineEngine").field("dir", &self.dir).finish()
    }
}

impl BaselineEngine {
    /// Opens `dir`, loading data file indexes and replaying any WAL.
    pub fn open(dir: impl AsRef<Path>, config: BaselineConfig) -> Result<Self> {
        if config.memtable_bytes == 0 || config.block_bytes == 0 {
            return Err(Error::InvalidConfig("baseline budgets must be positive".into()));
        }
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut data_ids = Vec::new();
        let mut wal_ids = Vec::new();
        for f in fs::read_dir(&dir)? {
            let name = f?.file_name().to_string_lossy().into_owned();
            if let Some(id) = parse_name(&name, "data-", ".dat") {
                data_ids.push(id);
            } else if let Some(id) = parse_name(&name, "wal-", ".wal") {
                wal_ids.push(id);
            }
        }
        data_ids.sort_unstable();
        wal_ids.sort_unstable();
        let files = data_ids.iter().map(|&id| load_data_file(&dir, id).map(Arc::new)).collect::<Result<Vec<_>>>()?;
        // A WAL at or below the newest data file was flushed already.
        let flushed = data_ids.last().copied();
        for &id in wal_ids.iter().filter(|&&w| flushed.is_some_and(|d| w <= d)) {
            fs::remove_file(dir.join(wal_name(id)))?;
        }
        wal_ids.retain(|&w| flushed.is_none_or(|d| w > d));

        let mut mem = MemBuffer::default();
        let mut max_ts = files.iter().map(|f| f.max_ts).max().unwrap_or(0);
        for &id in &wal_ids {
            let buf = fs::read(dir.join(wal_name(id)))?;
            let mut pos = 0;
            while pos < buf.len() {
                match decode_frame(&buf[pos..]) {
                    Frame::Complete { payload, frame_len } => {
                        let (k, v) = decode_wal(payload)?;
                        max_ts = max_ts.max(v.ts);
                        mem.insert(k, v);
                        pos += frame_len;
                    }
                    // A torn tail is the only expected damage.
                    Frame::Incomplete | Frame::Corrupt => break,
                }
            }
        }
        let wal_id = wal_ids.last().copied().unwrap_or_else(|| flushed.map_or(0, |d| d + 1));
        let file = OpenOptions::new().create(true).append(true).open(dir.join(wal_name(wal_id)))?;
        let cache = NonZeroUsize::new(config.cache_blocks).map(|n| Mutex::new(LruCache::new(n)));
        let engine = BaselineEngine {
            dir,
            config,
            wal: Mutex::new(Wal { id: wal_id, file }),
            mem: RwLock::new(mem),
            files: RwLock::new(files),
            cache,
            next_ts: AtomicU64::new(max_ts + 1),
            counters: Counters::default(),
        };
        if wal_ids.len() > 1 {
            engine.flush()?;
        }
        Ok(engine)
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    pub fn stats(&self) -> BaselineStats {
        let c = &self.counters;
        BaselineStats {
            wal_bytes: c.wal_bytes.load(Ordering::Relaxed),
            data_bytes: c.data_bytes.load(Ordering::Relaxed),
            block_reads: c.block_reads.load(Ordering::Relaxed),
            cache_hits: c.cache_hits.load(Ordering::Relaxed),
            flushes: c.flushes.load(Ordering::Relaxed),
            syncs: c.syncs.load(Ordering::Relaxed),
        }
    }

    pub fn data_file_count(&self) -> usize {
        self.files.read().len()
    }

    pub fn put(&self, key: &[u8], value: &[u8]) -> Result<u64> {
        self.write(key, Some(value.to_vec()))
    }

    pub fn delete(&self, key: &[u8]) -> Result<u64> {
        self.write(key, None)
    }

    fn write(&self, key: &[u8], value: Option<Vec<u8>>) -> Result<u64> {
        let mut wal = self.wal.lock();
        let ts = self.next_ts.fetch_add(1, Ordering::AcqRel);
        let v = Version { ts, value };
        let add = record_size(key, &v);
        let overflow = {
            let mem = self.mem.read();
            !mem.map.is_empty() && mem.bytes + add > self.config.memtable_bytes
        };
        if overflow {
            // The buffer never exceeds its budget; the writer waits for it
            // to reach disk.
            self.flush_locked(&mut wal)?;
        }
        let frame = encode_frame(&encode_wal(key, &v));
        wal.file.write_all(&frame)?;
        if self.config.sync_wal {
            wal.file.sync_data()?;
            self.counters.syncs.fetch_add(1, Ordering::Relaxed);
        }
        self.counters.wal_bytes.fetch_add(frame.len() as u64, Ordering::Relaxed);
        self.mem.write().insert(key.to_vec(), v);
        Ok(ts)
    }

    /// Writes the in-memory buffer out as a data file and starts a new WAL.
    pub fn flush(&self) -> Result<()> {
        let mut wal = self.wal.lock();
        self.flush_locked(&mut wal)
    }

    fn flush_locked(&self, wal: &mut Wal) -> Result<()> {
        let snapshot: Vec<(Vec<u8>, Version)> = {
            let mem = self.mem.read();
            if mem.map.is_empty() {
                return Ok(());
            }
            mem.map.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
        };
        let id = wal.id;
        let mut bytes = Vec::new();
        let mut blocks = Vec::new();
        let mut block_start = 0usize;
        for (k, v) in &snapshot {
            if bytes.len() == block_start {
                blocks.push(BlockRef { first_key: k.clone(), offset: block_start as u64, len: 0 });
            }
            encode_record(&mut bytes, k, v);
            if bytes.len() - block_start >= self.config.block_bytes {
                blocks.last_mut().expect("opened above").len = (bytes.len() - block_start) as u32;
                block_start = bytes.len();
            }
        }
        if let Some(b) = blocks.last_mut().filter(|b| b.len == 0) {
            b.len = (bytes.len() - block_start) as u32;
        }
        let index_offset = bytes.len() as u64;
        bytes.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for b in &blocks {
            put_bytes(&mut bytes, &b.first_key);
            bytes.extend_from_slice(&b.offset.to_le_bytes());
            bytes.extend_from_slice(&b.len.to_le_bytes());
        }
        let max_ts = snapshot.iter().map(|(_, v)| v.ts).max().unwrap_or(0);
        bytes.extend_from_slice(&index_offset.to_le_bytes());
        bytes.extend_from_slice(&max_ts.to_le_bytes());
        write_atomic(&self.dir, &data_name(id), &bytes)?;
        self.counters.data_bytes.fetch_add(bytes.len() as u64, Ordering::Relaxed);
        self.counters.flushes.fetch_add(1, Ordering::Relaxed);

        let file = DataFile {
            id,
            path: self.dir.join(data_name(id)),
            blocks,
            last_key: snapshot.last().map(|(k, _)| k.clone()).unwrap_or_default(),
            max_ts,
        };
        let next = id + 1;
        let new_wal = OpenOptions::new().create(true).append(true).open(self.dir.join(wal_name(next)))?;
        {
            let mut files = self.files.write();
            let mut mem = self.mem.write();
            files.push(Arc::new(file));
            *mem = MemBuffer::default();
        }
        let old = std::mem::replace(wal, Wal { id: next, file: new_wal });
        drop(old.file);
        for f in fs::read_dir(&self.dir)? {
            let name = f?.file_name().to_string_lossy().into_owned();
            if parse_name(&name, "wal-", ".wal").is_some_and(|w| w <= id) {
                fs::remove_file(self.dir.join(name))?;
            }
        }
        Ok(())
    }

    fn read_block(&self, file: &DataFile, i: usize) -> Result<Arc<Vec<u8>>> {
        if let Some(cache) = &self.cache {
            if let Some(b) = cache.lock().get(&(file.id, i)) {
                self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(b.clone());
            }
        }
        let b = &file.blocks[i];
        let mut f = File::open(&file.path)?;
        f.seek(SeekFrom::Start(b.offset))?;
        let mut buf = vec![0; b.len as usize];
        f.read_exact(&mut buf)?;
        self.counters.block_reads.fetch_add(1, Ordering::Relaxed);
        let buf = Arc::new(buf);
        if let Some(cache) = &self.cache {
            cache.lock().put((file.id, i), buf.clone());
        }
        Ok(buf)
    }

    fn lookup(&self, key: &[u8]) -> Result<Option<Version>> {
        if let Some(v) = self.mem.read().map.get(key) {
            return Ok(Some(v.clone()));
        }
        let files: Vec<Arc<DataFile>> = self.files.read().clone();
        for file in files.iter().rev() {
            let Some(i) = file.block_for(key) else { continue };
            let block = self.read_block(file, i)?;
            let mut c = Cursor { buf: &block, pos: 0 };
            while !c.done() {
                let (k, v) = decode_record(&mut c)?;
                match k.as_slice().cmp(key) {
                    std::cmp::Ordering::Less => continue,
                    std::cmp::Ordering::Equal => return Ok(Some(v)),
                    std::cmp::Ordering::Greater => break,
                }
            }
        }
        Ok(None)
    }

    pub fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        Ok(self.lookup(key)?.and_then(|v| v.value))
    }

    /// Live records in `[start, end)`, merged across the buffer and every
    /// data file, newest version winning.
    pub fn range_scan(&self, start: &[u8], end: Option<&[u8]>) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        let in_range = |k: &[u8]| k >= start && end.is_none_or(|e| k < e);
        let files: Vec<Arc<DataFile>> = self.files.read().clone();
        let mut merged: BTreeMap<Vec<u8>, Option<Vec<u8>>> = BTreeMap::new();
        for file in &files {
            let first = file.blocks.partition_point(|b| b.first_key.as_slice() <= start).saturating_sub(1);
            for i in first..file.blocks.len() {
                if end.is_some_and(|e| file.blocks[i].first_key.as_slice() >= e) {
                    break;
                }
                let block = self.read_block(file, i)?;
                let mut c = Cursor { buf: &block, pos: 0 };
                while !c.done() {
                    let (k, v) = decode_record(&mut c)?;
                    if in_range(&k) {
                        merged.insert(k, v.value);
                    }
                }
            }
        }
        {
            let mem = self.mem.read();
            let upper = end.map_or(Bound::Unbounded, |e| Bound::Excluded(e.to_vec()));
            for (k, v) in mem.map.range((Bound::Included(start.to_vec()), upper)) {
                merged.insert(k.clone(), v.value.clone());
            }
        }
        Ok(merged.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))).collect())
    }
}

fn load_data_file(dir: &Path, id: u64) -> Result<DataFile> {
    let path = dir.join(data_name(id));
    let bytes = fs::read(&path)?;
    let corrupt = || Error::Corrupt(format!("bad data file {}", path.display()));
    let footer = bytes.len().checked_sub(16).ok_or_else(corrupt)?;
    let index_offset = u64::from_le_bytes(bytes[footer..footer + 8].try_into().expect("8 bytes")) as usize;
    let max_ts = u64::from_le_bytes(bytes[footer + 8..].try_into().expect("8 bytes"));
    let mut c = Cursor { buf: bytes.get(index_offset..footer).ok_or_else(corrupt)?, pos: 0 };
    let n = c.u32()?;
    let mut blocks = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let first_key = c.bytes()?.to_vec();
        let offset = c.u64()?;
        let len = c.u32()?;
        blocks.push(BlockRef { first_key, offset, len });
    }
    let mut last_key = Vec::new();
    if let Some(b) = blocks.last() {
        let mut c = Cursor { buf: bytes.get(b.offset as usize..(b.offset as usize + b.len as usize)).ok_or_else(corrupt)?, pos: 0 };
        while !c.done() {
            last_key = decode_record(&mut c)?.0;
        }
    }
    Ok(DataFile { id, path, blocks, last_key, max_ts })
}

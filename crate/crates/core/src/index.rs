//! In-memory multiversion index.
//!
//! Conceptually an ordered map from `IdxKey = primary_key ‖ ts` to the log
//! address of that version. Versions of one key are stored together in a
//! small vector sorted by timestamp, so all versions of a key are contiguous
//! and the whole index iterates in `(primary_key, ts)` order.
//!
//! Index files are a sorted run of entry records followed by a crc32 of the
//! whole file:
//!
//! ```text
//! "LBIX" | version u16 = 1 | count u64
//! count × { key_len u32 | key | ts u64 | segment u64 | kind u8 | offset u64 | length u32 | lsn u64 | flags u8 }
//! crc32 u32
//! ```
//!
//! Records are fixed-width apart from the key bytes. `flags` bit 0 marks a
//! tombstone.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::ops::Bound;

use crate::wire::{open_with_crc, seal_with_crc, Reader, Writer};
use crate::{Error, LogAddress, Lsn, Result, SegmentId, SegmentKind, Timestamp};

/// Logical size of one entry: 16 bytes of key and timestamp plus an 8-byte pointer.
pub const LOGICAL_ENTRY_BYTES: usize = 24;

const MAGIC: &[u8; 4] = b"LBIX";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IdxKey {
    pub primary_key: Vec<u8>,
    pub ts: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub key: IdxKey,
    pub addr: LogAddress,
    pub lsn: Lsn,
    pub tombstone: bool,
}

impl IndexEntry {
    pub fn ts(&self) -> Timestamp {
        self.key.ts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    ts: Timestamp,
    addr: LogAddress,
    lsn: Lsn,
    tombstone: bool,
}

impl Slot {
    fn entry(&self, key: &[u8]) -> IndexEntry {
        IndexEntry {
            key: IdxKey { primary_key: key.to_vec(), ts: self.ts },
            addr: self.addr,
            lsn: self.lsn,
            tombstone: self.tombstone,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MvIndex {
    keys: BTreeMap<Vec<u8>, Vec<Slot>>,
    len: usize,
}

impl MvIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a version. An existing entry with the same key and timestamp is
    /// only replaced when the new LSN is greater.
    ///
    /// Returns whether the index changed.
    pub fn put(&mut self, entry: IndexEntry) -> bool {
        let slot = Slot { ts: entry.key.ts, addr: entry.addr, lsn: entry.lsn, tombstone: entry.tombstone };
        let versions = self.keys.entry(entry.key.primary_key).or_default();
        match versions.binary_search_by_key(&slot.ts, |s| s.ts) {
            Ok(i) => {
                if slot.lsn > versions[i].lsn {
                    versions[i] = slot;
                    true
                } else {
                    false
                }
            }
            Err(i) => {
                versions.insert(i, slot);
                self.len += 1;
                true
            }
        }
    }

    pub fn get_latest(&self, key: &[u8]) -> Option<IndexEntry> {
        self.keys.get(key).and_then(|v| v.last()).map(|s| s.entry(key))
    }

    /// Newest version with `ts <= as_of`.
    pub fn get_as_of(&self, key: &[u8], as_of: Timestamp) -> Option<IndexEntry> {
        let versions = self.keys.get(key)?;
        let idx = versions.partition_point(|s| s.ts <= as_of);
        idx.checked_sub(1).map(|i| versions[i].entry(key))
    }

    pub fn versions(&self, key: &[u8]) -> Vec<IndexEntry> {
        self.keys
            .get(key)
            .map(|v| v.iter().map(|s| s.entry(key)).collect())
            .unwrap_or_default()
    }

    pub fn remove_all_versions(&mut self, key: &[u8]) -> usize {
        let removed = self.keys.remove(key).map_or(0, |v| v.len());
        self.len -= removed;
        removed
    }

    /// Drops versions written before `lsn`. This is the delete rule applied
    /// during redo, where newer versions may already be in the index.
    pub fn remove_versions_before(&mut self, key: &[u8], lsn: Lsn) -> usize {
        let Some(versions) = self.keys.get_mut(key) else {
            return 0;
        };
        let before = versions.len();
        versions.retain(|s| s.lsn >= lsn);
        let removed = before - versions.len();
        if versions.is_empty() {
            self.keys.remove(key);
        }
        self.len -= removed;
        removed
    }

    /// For each distinct key in `[start, end)`, the version visible at
    /// `snapshot_ts`, skipping keys whose visible version is a tombstone.
    /// `end = None` means unbounded.
    pub fn range<'a>(
        &'a self,
        start: &[u8],
        end: Option<&[u8]>,
        snapshot_ts: Timestamp,
    ) -> Result<impl Iterator<Item = IndexEntry> + 'a> {
        if let Some(end) = end {
            if end < start {
                return Err(Error::InvertedRange);
            }
        }
        let upper = match end {
            Some(e) => Bound::Excluded(e),
            None => Bound::Unbounded,
        };
        let iter = self
            .keys
            .range::<[u8], _>((Bound::Included(start), upper))
            .filter_map(move |(key, versions)| {
                let idx = versions.partition_point(|s| s.ts <= snapshot_ts);
                let slot = versions[..idx].last()?;
                (!slot.tombstone).then(|| slot.entry(key))
            });
        Ok(iter)
    }

    /// Every entry, ascending by `(primary_key, ts)`.
    pub fn iter(&self) -> impl Iterator<Item = IndexEntry> + '_ {
        self.keys
            .iter()
            .flat_map(|(k, versions)| versions.iter().map(move |s| s.entry(k)))
    }

    /// Distinct primary keys, ascending.
    pub fn keys(&self) -> impl Iterator<Item = &[u8]> + '_ {
        self.keys.keys().map(Vec::as_slice)
    }

    pub fn key_count(&self) -> usize {
        self.keys.len()
    }

    pub fn entry_count(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Logical footprint at 24 bytes per entry; excludes map overhead.
    pub fn approx_bytes(&self) -> usize {
        self.len * LOGICAL_ENTRY_BYTES
    }

    pub fn max_lsn(&self) -> Lsn {
        self.keys.values().flatten().map(|s| s.lsn).max().unwrap_or(0)
    }

    pub fn max_ts(&self) -> Timestamp {
        self.keys.values().flatten().map(|s| s.ts).max().unwrap_or(0)
    }

    /// Rewrites every address through `f`; entries for which `f` returns
    /// `None` are dropped.
    pub fn retain_map<F>(&mut self, mut f: F)
    where
        F: FnMut(&[u8], &IndexEntry) -> Option<LogAddress>,
    {
        let mut removed = 0;
        self.keys.retain(|key, versions| {
            versions.retain_mut(|slot| match f(key, &slot.entry(key)) {
                Some(addr) => {
                    slot.addr = addr;
                    true
                }
                None => {
                    removed += 1;
                    false
                }
            });
            !versions.is_empty()
        });
        self.len -= removed;
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(4 + 2 + 8 + self.len * 48 + 4);
        let mut w = Writer::new(&mut buf);
        w.raw(MAGIC);
        w.u16(VERSION);
        w.u64(self.len as u64);
        for (key, versions) in &self.keys {
            for s in versions {
                w.bytes(key);
                w.u64(s.ts);
                w.u64(s.addr.segment.seq);
                w.u8(s.addr.segment.kind.as_u8());
                w.u64(s.addr.offset);
                w.u32(s.addr.length);
                w.u64(s.lsn);
                w.u8(u8::from(s.tombstone));
            }
        }
        seal_with_crc(&mut buf);
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<MvIndex> {
        let body = open_with_crc(bytes)?;
        let mut r = Reader::new(body);
        if r.take(4)? != MAGIC {
            return Err(Error::BadMagic);
        }
        if r.u16()? != VERSION {
            return Err(Error::Malformed("index file version"));
        }
        let count = r.u64()?;
        // Entries arrive sorted, so versions of a key are consecutive and the
        // map can be bulk-built.
        let mut runs: Vec<(Vec<u8>, Vec<Slot>)> = Vec::new();
        let mut prev: Option<(&[u8], Timestamp)> = None;
        for _ in 0..count {
            let key_len = r.u32()? as usize;
            let primary_key = r.take(key_len)?;
            let ts = r.u64()?;
            let seq = r.u64()?;
            let kind = SegmentKind::from_u8(r.u8()?).ok_or(Error::Malformed("segment kind"))?;
            let offset = r.u64()?;
            let length = r.u32()?;
            let lsn = r.u64()?;
            let flags = r.u8()?;
            if flags > 1 {
                return Err(Error::Malformed("index entry flags"));
            }
            if prev.is_some_and(|p| p >= (primary_key, ts)) {
                return Err(Error::Malformed("index file not strictly sorted"));
            }
            prev = Some((primary_key, ts));
            let slot = Slot { ts, addr: LogAddress { segment: SegmentId { seq, kind }, offset, length }, lsn, tombstone: flags == 1 };
            match runs.last_mut() {
                Some((k, versions)) if k.as_slice() == primary_key => versions.push(slot),
                _ => runs.push((primary_key.to_vec(), alloc::vec![slot])),
            }
        }
        r.finish()?;
        Ok(MvIndex { keys: runs.into_iter().collect(), len: count as usize })
    }
}

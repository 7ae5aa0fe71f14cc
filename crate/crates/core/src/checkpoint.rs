//! Checkpoint blocks, the checkpoint pointer, and sorted-segment metadata.
//!
//! All three are small binary records ending in a crc32 of the preceding
//! bytes. Strings use a `u16` length prefix, keys a `u32` length prefix.
//!
//! Checkpoint block:
//!
//! ```text
//! "LBCK" | version u16 = 1 | seq u64
//! log_position.segment u64 | log_position.offset u64
//! last_lsn u64 | next_ts u64 | next_txn_id u64
//! has_meta u8 | [meta file name str]
//! count u32 | count × { tablet u32 | group str | file str | entries u64 }
//! crc32 u32
//! ```
//!
//! Pointer file (`CURRENT`): `"LBCP" | block file name str | crc32 u32`.
//!
//! Sorted-segment metadata:
//!
//! ```text
//! "LBSM" | version u16 = 1 | generation u64 | cut.segment u64 | cut.offset u64 | cut_lsn u64
//! runs u32 | runs × { table str | group str | segments u32 |
//!                     segments × { seq u64 | entries u64 | first_key bytes | last_key bytes } }
//! crc32 u32
//! ```

use alloc::string::String;
use alloc::vec::Vec;

use crate::wire::{open_with_crc, seal_with_crc, Reader, Writer};
use crate::{Error, LogPosition, Lsn, Result, TabletId, Timestamp, TxnId};

const BLOCK_MAGIC: &[u8; 4] = b"LBCK";
const POINTER_MAGIC: &[u8; 4] = b"LBCP";
const META_MAGIC: &[u8; 4] = b"LBSM";
const VERSION: u16 = 1;

/// A persisted index file for one (tablet, column group).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexFileRef {
    pub tablet: TabletId,
    pub group: String,
    /// File name relative to the store directory.
    pub file: String,
    pub entries: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointBlock {
    pub seq: u64,
    /// First log position whose effects are *not* guaranteed to be in the index files.
    pub log_position: LogPosition,
    pub last_lsn: Lsn,
    pub next_ts: Timestamp,
    pub next_txn_id: TxnId,
    /// Sorted-segment metadata file live at this checkpoint, if compaction has run.
    pub sorted_meta: Option<String>,
    pub index_files: Vec<IndexFileRef>,
}

impl CheckpointBlock {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        let mut w = Writer::new(&mut buf);
        w.raw(BLOCK_MAGIC);
        w.u16(VERSION);
        w.u64(self.seq);
        w.u64(self.log_position.segment);
        w.u64(self.log_position.offset);
        w.u64(self.last_lsn);
        w.u64(self.next_ts);
        w.u64(self.next_txn_id);
        match &self.sorted_meta {
            Some(name) => {
                w.u8(1);
                w.str(name);
            }
            None => w.u8(0),
        }
        w.u32(self.index_files.len() as u32);
        for f in &self.index_files {
            w.u32(f.tablet);
            w.str(&f.group);
            w.str(&f.file);
            w.u64(f.entries);
        }
        seal_with_crc(&mut buf);
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(open_with_crc(bytes)?);
        if r.take(4)? != BLOCK_MAGIC {
            return Err(Error::BadMagic);
        }
        if r.u16()? != VERSION {
            return Err(Error::Malformed("checkpoint version"));
        }
        let seq = r.u64()?;
        let log_position = LogPosition { segment: r.u64()?, offset: r.u64()? };
        let last_lsn = r.u64()?;
        let next_ts = r.u64()?;
        let next_txn_id = r.u64()?;
        let sorted_meta = match r.u8()? {
            0 => None,
            1 => Some(r.str()?),
            _ => return Err(Error::Malformed("sorted meta flag")),
        };
        let count = r.u32()?;
        let mut index_files = Vec::new();
        for _ in 0..count {
            index_files.push(IndexFileRef { tablet: r.u32()?, group: r.str()?, file: r.str()?, entries: r.u64()? });
        }
        r.finish()?;
        Ok(CheckpointBlock { seq, log_position, last_lsn, next_ts, next_txn_id, sorted_meta, index_files })
    }
}

pub fn encode_pointer(block_file: &str) -> Vec<u8> {
    let mut buf = Vec::new();
    let mut w = Writer::new(&mut buf);
    w.raw(POINTER_MAGIC);
    w.str(block_file);
    seal_with_crc(&mut buf);
    buf
}

pub fn decode_pointer(bytes: &[u8]) -> Result<String> {
    let mut r = Reader::new(open_with_crc(bytes)?);
    if r.take(4)? != POINTER_MAGIC {
        return Err(Error::BadMagic);
    }
    let name = r.str()?;
    r.finish()?;
    Ok(name)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortedSegmentInfo {
    pub seq: u64,
    pub entries: u64,
    pub first_key: Vec<u8>,
    pub last_key: Vec<u8>,
}

/// Sorted segments holding one (table, column group), in key order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortedRun {
    pub table: String,
    pub group: String,
    pub segments: Vec<SortedSegmentInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SortedMeta {
    pub generation: u64,
    /// Log position where the compaction that wrote these segments stopped.
    pub cut: LogPosition,
    pub cut_lsn: Lsn,
    pub runs: Vec<SortedRun>,
}

impl SortedMeta {
    pub fn run(&self, table: &str, group: &str) -> Option<&SortedRun> {
        self.runs.iter().find(|r| r.table == table && r.group == group)
    }

    pub fn segment_seqs(&self) -> impl Iterator<Item = u64> + '_ {
        self.runs.iter().flat_map(|r| r.segments.iter().map(|s| s.seq))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        let mut w = Writer::new(&mut buf);
        w.raw(META_MAGIC);
        w.u16(VERSION);
        w.u64(self.generation);
        w.u64(self.cut.segment);
        w.u64(self.cut.offset);
        w.u64(self.cut_lsn);
        w.u32(self.runs.len() as u32);
        for run in &self.runs {
            w.str(&run.table);
            w.str(&run.group);
            w.u32(run.segments.len() as u32);
            for s in &run.segments {
                w.u64(s.seq);
                w.u64(s.entries);
                w.bytes(&s.first_key);
                w.bytes(&s.last_key);
            }
        }
        seal_with_crc(&mut buf);
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(open_with_crc(bytes)?);
        if r.take(4)? != META_MAGIC {
            return Err(Error::BadMagic);
        }
        if r.u16()? != VERSION {
            return Err(Error::Malformed("sorted meta version"));
        }
        let generation = r.u64()?;
        let cut = LogPosition { segment: r.u64()?, offset: r.u64()? };
        let cut_lsn = r.u64()?;
        let nruns = r.u32()?;
        let mut runs = Vec::new();
        for _ in 0..nruns {
            let table = r.str()?;
            let group = r.str()?;
            let nseg = r.u32()?;
            let mut segments = Vec::new();
            for _ in 0..nseg {
                segments.push(SortedSegmentInfo {
                    seq: r.u64()?,
                    entries: r.u64()?,
                    first_key: r.bytes()?,
                    last_key: r.bytes()?,
                });
            }
            runs.push(SortedRun { table, group, segments });
        }
        r.finish()?;
        Ok(SortedMeta { generation, cut, cut_lsn, runs })
    }
}

//! Typed log entries and their wire encoding.
//!
//! Every entry starts with a one-byte tag. Integers are fixed-width little
//! endian, strings carry a `u16` length prefix and byte strings (keys and
//! values) a `u32` length prefix.
//!
//! | tag  | variant     | fields after the tag                                                                 |
//! |------|-------------|--------------------------------------------------------------------------------------|
//! | 0x01 | Write       | lsn u64, table str, tablet u32, txn_id u64, key bytes, group str, write_ts u64, value bytes |
//! | 0x02 | Invalidated | lsn u64, table str, tablet u32, txn_id u64, key bytes, group str, write_ts u64        |
//! | 0x03 | Commit      | lsn u64, table str, tablet u32, txn_id u64, commit_ts u64                            |
//! | 0x04 | Stripped    | lsn u64, key bytes, write_ts u64, present u8, [value bytes if present = 1]            |
//!
//! Stripped entries only appear in sorted segments, where table and column
//! group are implied by the segment metadata.

use alloc::string::String;
use alloc::vec::Vec;

use crate::wire::{Reader, Writer};
use crate::{Error, Lsn, Result, TabletId, Timestamp, TxnId};

const TAG_WRITE: u8 = 0x01;
const TAG_INVALIDATED: u8 = 0x02;
const TAG_COMMIT: u8 = 0x03;
const TAG_STRIPPED: u8 = 0x04;

/// Bytes taken by a Write entry besides table, key, group and value.
pub const WRITE_FIXED_LEN: usize = 1 + 8 + 2 + 4 + 8 + 4 + 2 + 8 + 4;
/// Bytes taken by a Commit entry besides the table name.
pub const COMMIT_FIXED_LEN: usize = 1 + 8 + 2 + 4 + 8 + 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LogKey {
    pub lsn: Lsn,
    pub table: String,
    pub tablet: TabletId,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RowKey {
    pub primary_key: Vec<u8>,
    pub column_group: String,
    pub write_ts: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LogEntry {
    Write {
        log_key: LogKey,
        row_key: RowKey,
        txn_id: TxnId,
        value: Vec<u8>,
    },
    /// Delete marker; carries no value at all.
    Invalidated {
        log_key: LogKey,
        row_key: RowKey,
        txn_id: TxnId,
    },
    Commit {
        log_key: LogKey,
        txn_id: TxnId,
        commit_ts: Timestamp,
    },
    Stripped {
        lsn: Lsn,
        primary_key: Vec<u8>,
        write_ts: Timestamp,
        value: Option<Vec<u8>>,
    },
}

/// An entry without its value, for readers that only rebuild indexes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EntryHeader {
    Write { log_key: LogKey, row_key: RowKey, txn_id: TxnId },
    Invalidated { log_key: LogKey, row_key: RowKey, txn_id: TxnId },
    Commit { log_key: LogKey, txn_id: TxnId, commit_ts: Timestamp },
    Stripped { lsn: Lsn, primary_key: Vec<u8>, write_ts: Timestamp, present: bool },
}

impl EntryHeader {
    pub fn lsn(&self) -> Lsn {
        match self {
            EntryHeader::Write { log_key, .. }
            | EntryHeader::Invalidated { log_key, .. }
            | EntryHeader::Commit { log_key, .. } => log_key.lsn,
            EntryHeader::Stripped { lsn, .. } => *lsn,
        }
    }
}

impl From<LogEntry> for EntryHeader {
    fn from(e: LogEntry) -> Self {
        match e {
            LogEntry::Write { log_key, row_key, txn_id, .. } => EntryHeader::Write { log_key, row_key, txn_id },
            LogEntry::Invalidated { log_key, row_key, txn_id } => EntryHeader::Invalidated { log_key, row_key, txn_id },
            LogEntry::Commit { log_key, txn_id, commit_ts } => EntryHeader::Commit { log_key, txn_id, commit_ts },
            LogEntry::Stripped { lsn, primary_key, write_ts, value } => {
                EntryHeader::Stripped { lsn, primary_key, write_ts, present: value.is_some() }
            }
        }
    }
}

impl LogEntry {
    pub fn lsn(&self) -> Lsn {
        match self {
            LogEntry::Write { log_key, .. }
            | LogEntry::Invalidated { log_key, .. }
            | LogEntry::Commit { log_key, .. } => log_key.lsn,
            LogEntry::Stripped { lsn, .. } => *lsn,
        }
    }

    pub fn txn_id(&self) -> Option<TxnId> {
        match self {
            LogEntry::Write { txn_id, .. }
            | LogEntry::Invalidated { txn_id, .. }
            | LogEntry::Commit { txn_id, .. } => Some(*txn_id),
            LogEntry::Stripped { .. } => None,
        }
    }

    /// The value a reader would see: `None` for deletes and commit records.
    pub fn value(&self) -> Option<&[u8]> {
        match self {
            LogEntry::Write { value, .. } => Some(value),
            LogEntry::Stripped { value, .. } => value.as_deref(),
            _ => None,
        }
    }

    pub fn into_value(self) -> Option<Vec<u8>> {
        match self {
            LogEntry::Write { value, .. } => Some(value),
            LogEntry::Stripped { value, .. } => value,
            _ => None,
        }
    }

    /// Reassigns the LSN; used when the group-commit writer stamps entries.
    pub fn set_lsn(&mut self, new: Lsn) {
        match self {
            LogEntry::Write { log_key, .. }
            | LogEntry::Invalidated { log_key, .. }
            | LogEntry::Commit { log_key, .. } => log_key.lsn = new,
            LogEntry::Stripped { lsn, .. } => *lsn = new,
        }
    }

    pub fn encoded_len(&self) -> usize {
        match self {
            LogEntry::Write { log_key, row_key, value, .. } => {
                WRITE_FIXED_LEN
                    + log_key.table.len()
                    + row_key.primary_key.len()
                    + row_key.column_group.len()
                    + value.len()
            }
            LogEntry::Invalidated { log_key, row_key, .. } => {
                WRITE_FIXED_LEN - 4
                    + log_key.table.len()
                    + row_key.primary_key.len()
                    + row_key.column_group.len()
            }
            LogEntry::Commit { log_key, .. } => COMMIT_FIXED_LEN + log_key.table.len(),
            LogEntry::Stripped { primary_key, value, .. } => {
                1 + 8 + 4 + primary_key.len() + 8 + 1 + value.as_ref().map_or(0, |v| 4 + v.len())
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut buf);
        buf
    }

    /// Like [`encode`](Self::encode) but rejects entries longer than `limit` bytes.
    pub fn encode_bounded(&self, limit: usize) -> Result<Vec<u8>> {
        let len = self.encoded_len();
        if len > limit {
            return Err(Error::EntryTooLarge { len, limit });
        }
        Ok(self.encode())
    }

    pub fn encode_into(&self, buf: &mut Vec<u8>) {
        let mut w = Writer::new(buf);
        match self {
            LogEntry::Write { log_key, row_key, txn_id, value } => {
                w.u8(TAG_WRITE);
                put_log_key(&mut w, log_key);
                w.u64(*txn_id);
                put_row_key(&mut w, row_key);
                w.bytes(value);
            }
            LogEntry::Invalidated { log_key, row_key, txn_id } => {
                w.u8(TAG_INVALIDATED);
                put_log_key(&mut w, log_key);
                w.u64(*txn_id);
                put_row_key(&mut w, row_key);
            }
            LogEntry::Commit { log_key, txn_id, commit_ts } => {
                w.u8(TAG_COMMIT);
                put_log_key(&mut w, log_key);
                w.u64(*txn_id);
                w.u64(*commit_ts);
            }
            LogEntry::Stripped { lsn, primary_key, write_ts, value } => {
                w.u8(TAG_STRIPPED);
                w.u64(*lsn);
                w.bytes(primary_key);
                w.u64(*write_ts);
                match value {
                    Some(v) => {
                        w.u8(1);
                        w.bytes(v);
                    }
                    None => w.u8(0),
                }
            }
        }
    }

    pub fn decode(payload: &[u8]) -> Result<LogEntry> {
        let mut r = Reader::new(payload);
        let entry = match r.u8()? {
            TAG_WRITE => {
                let log_key = get_log_key(&mut r)?;
                let txn_id = r.u64()?;
                let row_key = get_row_key(&mut r)?;
                let value = r.bytes()?;
                LogEntry::Write { log_key, row_key, txn_id, value }
            }
            TAG_INVALIDATED => {
                let log_key = get_log_key(&mut r)?;
                let txn_id = r.u64()?;
                let row_key = get_row_key(&mut r)?;
                LogEntry::Invalidated { log_key, row_key, txn_id }
            }
            TAG_COMMIT => {
                let log_key = get_log_key(&mut r)?;
                let txn_id = r.u64()?;
                let commit_ts = r.u64()?;
                LogEntry::Commit { log_key, txn_id, commit_ts }
            }
            TAG_STRIPPED => {
                let lsn = r.u64()?;
                let primary_key = r.bytes()?;
                let write_ts = r.u64()?;
                let value = match r.u8()? {
                    0 => None,
                    1 => Some(r.bytes()?),
                    _ => return Err(Error::Malformed("stripped presence flag")),
                };
                LogEntry::Stripped { lsn, primary_key, write_ts, value }
            }
            tag => return Err(Error::UnknownTag(tag)),
        };
        r.finish()?;
        Ok(entry)
    }
}

impl EntryHeader {
    /// Decodes everything but the value, which is checked for length only.
    pub fn decode(payload: &[u8]) -> Result<EntryHeader> {
        let mut r = Reader::new(payload);
        let header = match r.u8()? {
            TAG_WRITE => {
                let log_key = get_log_key(&mut r)?;
                let txn_id = r.u64()?;
                let row_key = get_row_key(&mut r)?;
                r.skip_bytes()?;
                EntryHeader::Write { log_key, row_key, txn_id }
            }
            TAG_INVALIDATED => {
                let log_key = get_log_key(&mut r)?;
                let txn_id = r.u64()?;
                let row_key = get_row_key(&mut r)?;
                EntryHeader::Invalidated { log_key, row_key, txn_id }
            }
            TAG_COMMIT => {
                let log_key = get_log_key(&mut r)?;
                let txn_id = r.u64()?;
                let commit_ts = r.u64()?;
                EntryHeader::Commit { log_key, txn_id, commit_ts }
            }
            TAG_STRIPPED => {
                let lsn = r.u64()?;
                let primary_key = r.bytes()?;
                let write_ts = r.u64()?;
                let present = match r.u8()? {
                    0 => false,
                    1 => {
                        r.skip_bytes()?;
                        true
                    }
                    _ => return Err(Error::Malformed("stripped presence flag")),
                };
                EntryHeader::Stripped { lsn, primary_key, write_ts, present }
            }
            tag => return Err(Error::UnknownTag(tag)),
        };
        r.finish()?;
        Ok(header)
    }
}

fn put_log_key(w: &mut Writer<'_>, k: &LogKey) {
    w.u64(k.lsn);
    w.str(&k.table);
    w.u32(k.tablet);
}

fn get_log_key(r: &mut Reader<'_>) -> Result<LogKey> {
    Ok(LogKey { lsn: r.u64()?, table: r.str()?, tablet: r.u32()? })
}

fn put_row_key(w: &mut Writer<'_>, k: &RowKey) {
    w.bytes(&k.primary_key);
    w.str(&k.column_group);
    w.u64(k.write_ts);
}

fn get_row_key(r: &mut Reader<'_>) -> Result<RowKey> {
    Ok(RowKey { primary_key: r.bytes()?, column_group: r.str()?, write_ts: r.u64()? })
}

//! Storage-independent pieces of the logbase engine.
//!
//! Everything here works on byte slices and in-memory structures only, so the
//! crate builds with `#![no_std]` plus `alloc`. File handling, threads and the
//! command line live in the `logbase` crate.
//!
//! * [`frame`]: the `[len][crc32][payload]` framing used for every log record.
//! * [`codec`]: typed log entries and their wire encoding.
//! * [`index`]: the multiversion index (primary key ‖ timestamp → log address)
//!   and its index-file format.
//! * [`checkpoint`]: checkpoint blocks and sorted-segment metadata.
//! * [`advisor`]: exhaustive vertical-partition advisor.

#![no_std]

extern crate alloc;

pub mod address;
pub mod advisor;
pub mod checkpoint;
pub mod codec;
mod error;
pub mod frame;
pub mod index;
mod wire;

pub use address::{LogAddress, LogPosition, SegmentId, SegmentKind};
pub use codec::{EntryHeader, LogEntry, LogKey, RowKey};
pub use error::{Error, Result};
pub use index::{IdxKey, IndexEntry, MvIndex};

/// Log sequence number.
pub type Lsn = u64;
/// Commit timestamp handed out by the timestamp authority.
pub type Timestamp = u64;
/// Transaction identifier, unique over the lifetime of a store directory.
pub type TxnId = u64;
/// Tablet identifier, unique within one engine.
pub type TabletId = u32;

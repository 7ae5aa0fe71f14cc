use std::io;

use logbase_core::{LogAddress, SegmentId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("format error: {0}")]
    Format(#[from] logbase_core::Error),

    #[error("storage full: {needed} more bytes would exceed the {limit}-byte limit")]
    StorageFull { needed: u64, limit: u64 },
    #[error("payload of {len} bytes does not fit a segment (max {limit})")]
    PayloadTooLarge { len: usize, limit: usize },
    #[error("store is closed")]
    StoreClosed,
    #[error("checksum mismatch at {segment} offset {offset}")]
    ChecksumMismatch { segment: SegmentId, offset: u64 },
    #[error("address {0:?} is outside its segment")]
    AddressOutOfRange(LogAddress),
    #[error("segment {0} does not exist")]
    MissingSegment(SegmentId),
    #[error("segment {0} is active or still referenced")]
    SegmentInUse(SegmentId),
    #[error("corrupt store: {0}")]
    Corrupt(String),

    #[error("table {0:?} does not exist")]
    UnknownTable(String),
    #[error("column group {group:?} is not part of table {table:?}")]
    UnknownGroup { table: String, group: String },
    #[error("table {0:?} already exists")]
    TableExists(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("key is outside the tablet's range")]
    KeyOutOfRange,
    #[error("index points at {0:?} but the log holds no readable version there")]
    DanglingAddress(LogAddress),

    #[error("transaction {txn_id} aborted: {reason}")]
    Conflict { txn_id: u64, reason: ConflictReason },
    #[error("transaction {0} is not active")]
    TxnNotActive(u64),

    #[error("compaction is already running")]
    CompactionInProgress,
    #[error("compaction output was already swapped in")]
    AlreadySwapped,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("injected fault at step {0}")]
    InjectedFault(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConflictReason {
    /// A record in the write set changed after it was read.
    VersionChanged,
    /// A range read now returns a different set of keys.
    RangeChanged,
    /// Could not obtain every write lock within the retry budget.
    LockTimeout,
}

impl std::fmt::Display for ConflictReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConflictReason::VersionChanged => "a written record changed since it was read",
            ConflictReason::RangeChanged => "a range read is no longer repeatable",
            ConflictReason::LockTimeout => "write locks unavailable",
        })
    }
}

impl Error {
    pub fn is_conflict(&self) -> bool {
        matches!(self, Error::Conflict { .. })
    }
}

use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Input ended before a field was complete.
    Truncated,
    /// Bytes left over after a complete structure.
    TrailingBytes(usize),
    UnknownTag(u8),
    Malformed(&'static str),
    InvalidUtf8,
    BadMagic,
    ChecksumMismatch,
    /// An encoded entry would exceed the configured size limit.
    EntryTooLarge { len: usize, limit: usize },
    InvertedRange,
    TooManyColumns { columns: usize, limit: usize },
    UnknownColumn(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Truncated => f.write_str("input truncated"),
            Error::TrailingBytes(n) => write!(f, "{n} trailing bytes after structure"),
            Error::UnknownTag(t) => write!(f, "unknown entry tag {t:#04x}"),
            Error::Malformed(what) => write!(f, "malformed field: {what}"),
            Error::InvalidUtf8 => f.write_str("string field is not valid utf-8"),
            Error::BadMagic => f.write_str("bad magic number"),
            Error::ChecksumMismatch => f.write_str("checksum mismatch"),
            Error::EntryTooLarge { len, limit } => {
                write!(f, "entry of {len} bytes exceeds limit of {limit}")
            }
            Error::InvertedRange => f.write_str("range start is greater than range end"),
            Error::TooManyColumns { columns, limit } => {
                write!(f, "{columns} columns exceeds the advisor limit of {limit}")
            }
            Error::UnknownColumn(c) => write!(f, "unknown column {c:?}"),
        }
    }
}

impl core::error::Error for Error {}

use core::fmt;

/// Whether a segment belongs to the append-only log or was written by compaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SegmentKind {
    Log,
    Sorted,
}

impl SegmentKind {
    pub fn as_u8(self) -> u8 {
        match self {
            SegmentKind::Log => 0,
            SegmentKind::Sorted => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(SegmentKind::Log),
            1 => Some(SegmentKind::Sorted),
            _ => None,
        }
    }

    /// File-name suffix used by the segment store.
    pub fn suffix(self) -> &'static str {
        match self {
            SegmentKind::Log => "log",
            SegmentKind::Sorted => "sorted",
        }
    }
}

/// Segment number plus kind. Sequence numbers are unique across both kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SegmentId {
    pub seq: u64,
    pub kind: SegmentKind,
}

impl SegmentId {
    pub const fn log(seq: u64) -> Self {
        SegmentId { seq, kind: SegmentKind::Log }
    }

    pub const fn sorted(seq: u64) -> Self {
        SegmentId { seq, kind: SegmentKind::Sorted }
    }
}

impl PartialOrd for SegmentId {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SegmentId {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        self.seq.cmp(&other.seq).then(self.kind.cmp(&other.kind))
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016}.{}", self.seq, self.kind.suffix())
    }
}

/// Physical locator of one framed entry: segment, byte offset, frame length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LogAddress {
    pub segment: SegmentId,
    pub offset: u64,
    pub length: u32,
}

impl LogAddress {
    /// Offset of the first byte after this frame.
    pub fn end(&self) -> u64 {
        self.offset + u64::from(self.length)
    }

    pub fn position(&self) -> LogPosition {
        LogPosition { segment: self.segment.seq, offset: self.offset }
    }

    pub fn next_position(&self) -> LogPosition {
        LogPosition { segment: self.segment.seq, offset: self.end() }
    }
}

/// A frame boundary in the active log: `offset` bytes into log segment `segment`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct LogPosition {
    pub segment: u64,
    pub offset: u64,
}

impl LogPosition {
    pub const START: LogPosition = LogPosition { segment: 0, offset: 0 };
}

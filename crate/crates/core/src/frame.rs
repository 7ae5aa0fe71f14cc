//! Record framing: `[len: u32 LE][crc32(payload): u32 LE][payload]`.
//!
//! The length counts payload bytes only. A frame whose header or payload runs
//! past the end of the buffer is *incomplete* (a torn write when it is the last
//! thing in the log); a complete frame whose checksum does not match is
//! *corrupt*.

use alloc::vec::Vec;

pub const FRAME_OVERHEAD: usize = 8;

pub fn frame_len(payload_len: usize) -> usize {
    payload_len + FRAME_OVERHEAD
}

pub fn encode_frame_into(payload: &[u8], out: &mut Vec<u8>) {
    out.reserve(frame_len(payload.len()));
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out.extend_from_slice(payload);
}

pub fn encode_frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    encode_frame_into(payload, &mut out);
    out
}

#[derive(Debug, PartialEq, Eq)]
pub enum Frame<'a> {
    Complete { payload: &'a [u8], frame_len: usize },
    Incomplete,
    Corrupt,
}

/// Decodes the frame starting at `buf[0]`.
pub fn decode_frame(buf: &[u8]) -> Frame<'_> {
    if buf.len() < FRAME_OVERHEAD {
        return Frame::Incomplete;
    }
    let len = u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    let crc = u32::from_le_bytes([buf[4], buf[5], buf[6], buf[7]]);
    if len == 0 {
        return Frame::Corrupt;
    }
    let Some(end) = FRAME_OVERHEAD.checked_add(len) else {
        return Frame::Corrupt;
    };
    if buf.len() < end {
        return Frame::Incomplete;
    }
    let payload = &buf[FRAME_OVERHEAD..end];
    if crc32fast::hash(payload) != crc {
        return Frame::Corrupt;
    }
    Frame::Complete { payload, frame_len: end }
}

/// Parses only the header, returning the payload length and stored checksum.
pub fn decode_header(header: &[u8; FRAME_OVERHEAD]) -> (u32, u32) {
    (
        u32::from_le_bytes([header[0], header[1], header[2], header[3]]),
        u32::from_le_bytes([header[4], header[5], header[6], header[7]]),
    )
}

pub fn checksum(payload: &[u8]) -> u32 {
    crc32fast::hash(payload)
}

use std::io::{self, Write};

use rayon::prelude::*;

use super::{DetectionEvent, TimetagError};

pub const MAGIC: &[u8; 4] = b"TTAG";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 16;

/// Fixed 16-byte little-endian file header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TtagHeader {
    pub version: u16,
    pub channel_count: u16,
    pub record_count: u64,
}

impl TtagHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self, TimetagError> {
        if bytes.len() < HEADER_LEN {
            return Err(TimetagError::MalformedHeader(format!(
                "need {HEADER_LEN} header bytes, got {}",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(TimetagError::MalformedHeader("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(TimetagError::MalformedHeader(format!(
                "unsupported version {version}"
            )));
        }
        let channel_count = u16::from_le_bytes([bytes[6], bytes[7]]);
        let record_count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        Ok(Self {
            version,
            channel_count,
            record_count,
        })
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(MAGIC);
        out[4..6].copy_from_slice(&self.version.to_le_bytes());
        out[6..8].copy_from_slice(&self.channel_count.to_le_bytes());
        out[8..16].copy_from_slice(&self.record_count.to_le_bytes());
        out
    }
}

fn decode_record(rec: &[u8]) -> DetectionEvent {
    DetectionEvent {
        timestamp: u64::from_le_bytes(rec[0..8].try_into().unwrap()),
        channel: u16::from_le_bytes([rec[8], rec[9]]),
    }
}

fn encode_record(ev: &DetectionEvent, out: &mut [u8]) {
    out[0..8].copy_from_slice(&ev.timestamp.to_le_bytes());
    out[8..10].copy_from_slice(&ev.channel.to_le_bytes());
    out[10..16].fill(0);
}

/// Parses a complete TTAG buffer. Records are decoded in parallel chunks;
/// equal consecutive timestamps are accepted.
pub fn parse_stream(bytes: &[u8]) -> Result<Vec<DetectionEvent>, TimetagError> {
    let header = TtagHeader::parse(bytes)?;
    let body = &bytes[HEADER_LEN..];
    let available = (body.len() / RECORD_LEN) as u64;
    if available < header.record_count {
        return Err(TimetagError::TruncatedRecord {
            expected: header.record_count,
            available,
        });
    }
    let used = header.record_count as usize * RECORD_LEN;
    if body.len() != used {
        return Err(TimetagError::MalformedHeader(format!(
            "{} trailing bytes after {} records",
            body.len() - used,
            header.record_count
        )));
    }
    let events: Vec<DetectionEvent> = body
        .par_chunks_exact(RECORD_LEN)
        .with_min_len(1 << 14)
        .map(decode_record)
        .collect();
    if let Some(index) = events
        .par_windows(2)
        .position_first(|w| w[1].timestamp < w[0].timestamp)
    {
        return Err(TimetagError::NonMonotonicTimestamp {
            index: index + 1,
            previous: events[index].timestamp,
            current: events[index + 1].timestamp,
        });
    }
    Ok(events)
}

pub fn serialize_stream(events: &[DetectionEvent], channel_count: u16) -> Vec<u8> {
    let header = TtagHeader {
        version: VERSION,
        channel_count,
        record_count: events.len() as u64,
    };
    let mut out = vec![0u8; HEADER_LEN + events.len() * RECORD_LEN];
    out[..HEADER_LEN].copy_from_slice(&header.to_bytes());
    out[HEADER_LEN..]
        .par_chunks_exact_mut(RECORD_LEN)
        .with_min_len(1 << 14)
        .zip(events.par_iter())
        .for_each(|(chunk, ev)| encode_record(ev, chunk));
    out
}

pub fn write_stream<W: Write>(
    mut w: W,
    events: &[DetectionEvent],
    channel_count: u16,
) -> io::Result<()> {
    w.write_all(&serialize_stream(events, channel_count))?;
    w.flush()
}

//! Detection-event data model, the TTAG stream format, clock-offset
//! estimation and coincidence matching between the two parties' streams.

mod channels;
mod coincidence;
mod offset;
mod ttag;

pub use channels::{Arm, ChannelMap, ChannelRole, Outcome, Party, PartyChannels};
pub use coincidence::{match_coincidences, match_coincidences_reference, CoincidencePair};
pub use offset::{estimate_offset, refine_offset, OffsetSearch};
pub use ttag::{parse_stream, serialize_stream, write_stream, TtagHeader, HEADER_LEN, RECORD_LEN};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Integer picoseconds. Timestamps are never floats.
pub type Picos = u64;

/// One detector click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DetectionEvent {
    /// Picoseconds since the stream epoch.
    pub timestamp: Picos,
    pub channel: u16,
}

impl DetectionEvent {
    pub fn new(timestamp: Picos, channel: u16) -> Self {
        Self { timestamp, channel }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TimetagError {
    #[error("malformed TTAG header: {0}")]
    MalformedHeader(String),
    #[error("truncated record stream: header announces {expected} records, only {available} complete")]
    TruncatedRecord { expected: u64, available: u64 },
    #[error("timestamp decreases at record {index} ({previous} ps -> {current} ps)")]
    NonMonotonicTimestamp {
        index: usize,
        previous: Picos,
        current: Picos,
    },
    #[error("no significant correlation peak within the offset search range")]
    NoPeak,
    #[error("invalid offset search: {0}")]
    InvalidSearch(String),
    #[error("invalid channel map: {0}")]
    InvalidChannelMap(String),
    #[error("channel {0} is not present in the channel map")]
    UnknownChannel(u16),
}

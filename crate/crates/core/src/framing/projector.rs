use serde::{Deserialize, Serialize};

use super::{BinCoord, FrameKey, FramingError, SignConvention};
use crate::timetag::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> i8 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }
}

/// The two complete-ish bases the superposition arm realises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BasisFamily {
    /// (|0> +- |1>), (|2> +- |3>)
    Tsup1,
    /// (|1> +- |2>), (|3> +- |0'>)
    Tsup2,
}

/// (|k> +- |k+1>)/sqrt(2); for k = 3 the partner is |0'>, the bin one
/// interferometer delay after |3>, which lies outside the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TsupProjector {
    /// Lower bin k of the superposed pair (k, k+1).
    pub lower: u8,
    pub sign: Sign,
}

impl TsupProjector {
    pub const COUNT: usize = 8;

    pub fn new(lower: u8, sign: Sign) -> Self {
        debug_assert!(lower < 4);
        Self { lower, sign }
    }

    /// Table index: 2k for `+`, 2k+1 for `-`.
    pub fn index(&self) -> usize {
        2 * self.lower as usize + usize::from(self.sign == Sign::Minus)
    }

    pub fn from_index(i: usize) -> Self {
        Self::new(
            (i / 2) as u8,
            if i.is_multiple_of(2) { Sign::Plus } else { Sign::Minus },
        )
    }

    pub fn family(&self) -> BasisFamily {
        if self.lower.is_multiple_of(2) {
            BasisFamily::Tsup1
        } else {
            BasisFamily::Tsup2
        }
    }

    /// Involves |0'>, which has no counterpart inside the frame.
    pub fn uses_primed_bin(&self) -> bool {
        self.lower == 3
    }

    pub fn label(&self) -> &'static str {
        const LABELS: [&str; 8] = [
            "(0,1)+", "(0,1)-", "(1,2)+", "(1,2)-", "(2,3)+", "(2,3)-", "(3,0')+", "(3,0')-",
        ];
        LABELS[self.index()]
    }

    pub fn all() -> impl Iterator<Item = TsupProjector> {
        (0..Self::COUNT).map(Self::from_index)
    }
}

pub(crate) fn detector_sign(outcome: Outcome, convention: SignConvention) -> Sign {
    match (outcome, convention) {
        (Outcome::D, SignConvention::DPlus) | (Outcome::A, SignConvention::DMinus) => Sign::Plus,
        _ => Sign::Minus,
    }
}

/// A superposition-arm click at `bin` superposes its own bin with the one a
/// delay earlier. Slot k >= 1 gives pair (k-1, k) of the same frame; slot 0
/// gives pair (3, 0') of the same family in the previous interval.
pub fn tsup_projector_for_click(
    bin: BinCoord,
    detector: Outcome,
    convention: SignConvention,
) -> Result<(TsupProjector, FrameKey), FramingError> {
    let sign = detector_sign(detector, convention);
    if bin.slot == 0 {
        if bin.interval == 0 {
            return Err(FramingError::OutOfRange);
        }
        Ok((
            TsupProjector::new(3, sign),
            FrameKey {
                interval: bin.interval - 1,
                family: bin.family,
            },
        ))
    } else {
        Ok((TsupProjector::new(bin.slot - 1, sign), bin.frame()))
    }
}

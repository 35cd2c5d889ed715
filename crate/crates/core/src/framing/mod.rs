//! Interleaved time-bin discretisation.
//!
//! The stream is cut into intervals of length `4 * tau_mzi`. Inside an
//! interval, a timestamp has a slot `k = floor(r / tau_mzi)` and a phase
//! `r mod tau_mzi`; the phase is cut into `tau_mzi / delta_t` families. A
//! frame is the four bins of one family in one interval, so its bins start
//! exactly `tau_mzi` apart and frames of different families interleave to
//! cover the whole stream. With `delta_t == tau_mzi` there is one family and
//! frames are four contiguous bins.

mod projector;
mod tables;

pub use projector::{tsup_projector_for_click, BasisFamily, Sign, TsupProjector};
pub use tables::{
    accumulate_tables, tables_to_probabilities, CoincidenceTables, PartyClicks, SettingTotals,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timetag::Picos;

/// Frame dimension. Fixed: the interferometer gives access to four bins.
pub const DIM: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FramingError {
    #[error("invalid frame configuration: {0}")]
    InvalidConfig(String),
    #[error("slot-0 TSUP click at the start of the stream has no previous frame")]
    OutOfRange,
    #[error("no coincidences recorded for the {0} setting")]
    EmptySetting(&'static str),
}

/// How frames holding more than one click on one side are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MultiClickPolicy {
    /// Replace the ambiguous side's outcome by a uniformly random one.
    #[default]
    #[serde(alias = "random")]
    RandomOutcome,
    /// Drop the frame.
    #[serde(alias = "discard")]
    DiscardFrame,
}

/// Which D/A detector stands for the `+` superposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    #[default]
    DPlus,
    DMinus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameConfig {
    /// Time-bin length in picoseconds.
    pub delta_t: Picos,
    /// Interferometer delay in picoseconds.
    pub tau_mzi: Picos,
    pub d: usize,
    /// Coincidence window in picoseconds.
    pub window: Picos,
    pub policy: MultiClickPolicy,
    pub seed: u64,
    pub sign_convention: SignConvention,
}

pub const DEFAULT_TAU_MZI: Picos = 2700;

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            delta_t: 540,
            tau_mzi: DEFAULT_TAU_MZI,
            d: DIM,
            window: 4 * DEFAULT_TAU_MZI,
            policy: MultiClickPolicy::RandomOutcome,
            seed: 0,
            sign_convention: SignConvention::DPlus,
        }
    }
}

impl FrameConfig {
    pub fn with_delta_t(delta_t: Picos) -> Self {
        Self {
            delta_t,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FramingError> {
        if self.d != DIM {
            return Err(FramingError::InvalidConfig(format!(
                "dimension must be {DIM}, got {}",
                self.d
            )));
        }
        if self.delta_t == 0 || self.tau_mzi == 0 {
            return Err(FramingError::InvalidConfig(
                "delta_t and tau_mzi must be positive".into(),
            ));
        }
        if !self.tau_mzi.is_multiple_of(self.delta_t) {
            return Err(FramingError::InvalidConfig(format!(
                "delta_t = {} ps does not divide tau_mzi = {} ps",
                self.delta_t, self.tau_mzi
            )));
        }
        if self.window == 0 {
            return Err(FramingError::InvalidConfig("window must be positive".into()));
        }
        Ok(())
    }

    pub fn interval_len(&self) -> Picos {
        DIM as Picos * self.tau_mzi
    }

    pub fn families(&self) -> Picos {
        self.tau_mzi / self.delta_t
    }

    pub fn from_json(s: &str) -> Result<Self, FramingError> {
        let cfg: Self =
            serde_json::from_str(s).map_err(|e| FramingError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// All divisors of `tau_mzi`, ascending.
pub fn admissible_delta_ts(tau_mzi: Picos) -> Vec<Picos> {
    (1..=tau_mzi).filter(|d| tau_mzi.is_multiple_of(*d)).collect()
}

/// One frame: a family within an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameKey {
    pub interval: u64,
    pub family: u64,
}

impl FrameKey {
    pub fn start(&self, cfg: &FrameConfig) -> Picos {
        self.interval * cfg.interval_len() + self.family * cfg.delta_t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinCoord {
    pub interval: u64,
    pub family: u64,
    pub slot: u8,
}

impl BinCoord {
    pub fn frame(&self) -> FrameKey {
        FrameKey {
            interval: self.interval,
            family: self.family,
        }
    }

    pub fn start(&self, cfg: &FrameConfig) -> Picos {
        self.frame().start(cfg) + self.slot as Picos * cfg.tau_mzi
    }
}

/// Locates the bin holding `t`. `cfg` must be valid.
#[inline]
pub fn bin_index(t: Picos, cfg: &FrameConfig) -> BinCoord {
    let interval_len = cfg.interval_len();
    let interval = t / interval_len;
    let r = t % interval_len;
    BinCoord {
        interval,
        family: (r % cfg.tau_mzi) / cfg.delta_t,
        slot: (r / cfg.tau_mzi) as u8,
    }
}

//! Synthetic data at two levels: exact outcome probabilities of an
//! isotropic two-qudit state (an oracle for the certifier) and time-tag
//! streams produced by sampling that state's measurement statistics with
//! detector jitter, loss and background clicks.

mod state;
mod streams;

pub use state::IsotropicState;
pub use streams::{generate_streams, SimulatedStreams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::ProbabilityTables;
use crate::framing::DEFAULT_TAU_MZI;
use crate::scalar::Scalar;
use crate::timetag::{ChannelMap, Picos};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid source model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceModel {
    /// Weight of the maximally entangled component.
    pub v: f64,
    /// Emitted pairs per second.
    pub pair_rate: f64,
    /// Dark and ambient clicks per second, per detector.
    pub background_rate: f64,
    /// Gaussian timing jitter per detection, picoseconds.
    pub jitter_sigma: f64,
    pub loss_a: f64,
    pub loss_b: f64,
    pub tau_mzi: Picos,
    /// Added to every B timestamp, picoseconds.
    pub clock_offset: i64,
    /// Seconds.
    pub duration: f64,
    pub seed: u64,
}

impl Default for SourceModel {
    fn default() -> Self {
        Self {
            v: 1.0,
            pair_rate: 100_000.0,
            background_rate: 0.0,
            jitter_sigma: 0.0,
            loss_a: 0.0,
            loss_b: 0.0,
            tau_mzi: DEFAULT_TAU_MZI,
            clock_offset: 0,
            duration: 10.0,
            seed: 0,
        }
    }
}

impl SourceModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidModel(m.to_string()));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.v) {
            return bad("v must lie in [0, 1]");
        }
        if !unit(self.loss_a) || !unit(self.loss_b) {
            return bad("losses must lie in [0, 1]");
        }
        for (name, x) in [
            ("pair_rate", self.pair_rate),
            ("background_rate", self.background_rate),
            ("jitter_sigma", self.jitter_sigma),
            ("duration", self.duration),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(SimError::InvalidModel(format!(
                    "{name} must be finite and non-negative"
                )));
            }
        }
        if self.tau_mzi == 0 {
            return bad("tau_mzi must be positive");
        }
        Ok(())
    }

    pub fn state<T: Scalar>(&self) -> IsotropicState<T> {
        IsotropicState::new(T::lit(self.v))
    }
}

/// Exact outcome probabilities of the model's state. Background clicks have
/// no counterpart at this level, so the model must have none.
pub fn exact_probability_tables<T: Scalar>(
    model: &SourceModel,
) -> Result<ProbabilityTables<T>, SimError> {
    model.validate()?;
    if model.background_rate != 0.0 {
        return Err(SimError::InvalidModel(
            "exact tables describe the state alone; background_rate must be 0".into(),
        ));
    }
    Ok(model.state::<T>().probability_tables())
}

pub fn ground_truth_fidelity<T: Scalar>(model: &SourceModel) -> T {
    model.state::<T>().fidelity()
}

/// Written next to simulated TTAG files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationManifest {
    pub generator: String,
    pub model: SourceModel,
    pub channel_map: ChannelMap,
    pub alice_events: usize,
    pub bob_events: usize,
    pub ground_truth_fidelity: f64,
}

impl SimulationManifest {
    pub fn new(model: &SourceModel, streams: &SimulatedStreams) -> Self {
        Self {
            generator: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            model: *model,
            channel_map: streams.channels.clone(),
            alice_events: streams.alice.len(),
            bob_events: streams.bob.len(),
            ground_truth_fidelity: ground_truth_fidelity(model),
        }
    }
}

//! Schmidt-number certification for time-bin entangled photon pairs
//! measured with two unbalanced (Franson) interferometers.
//!
//! The pipeline reads two parties' time-tag streams, finds the clock
//! offset, pairs coincidences, cuts time into interleaved four-bin frames
//! and turns the resulting outcome frequencies into a lower bound on the
//! fidelity to the maximally entangled state of dimension four. A fidelity
//! above `(k - 1) / 4` certifies Schmidt number at least `k`.
//!
//! The certification math is generic over [`Scalar`] (`f32` or `f64`);
//! the `*F64` / `*F32` aliases below fix the precision.

pub mod analysis;
pub mod certify;
mod error;
pub mod framing;
pub(crate) mod linalg;
mod scalar;
pub mod sim;
pub mod timetag;

pub use error::Error;
pub use scalar::Scalar;

pub type ProbabilityTablesF64 = certify::ProbabilityTables<f64>;
pub type ProbabilityTablesF32 = certify::ProbabilityTables<f32>;
pub type DensityElementBoundsF64 = certify::DensityElementBounds<f64>;
pub type DensityElementBoundsF32 = certify::DensityElementBounds<f32>;
pub type CertificateF64 = certify::Certificate<f64>;
pub type CertificateF32 = certify::Certificate<f32>;
pub type SdpBoundF64 = certify::SdpBound<f64>;
pub type SdpBoundF32 = certify::SdpBound<f32>;
pub type IsotropicStateF64 = sim::IsotropicState<f64>;

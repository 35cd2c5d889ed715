//! Lower bounds on the frame-diagonal density-matrix elements, on the
//! fidelity to the maximally entangled state of dimension four, and the
//! Schmidt-number certificate that follows.
//!
//! The fidelity functional only sees the 4x4 Gram block
//! `M_ij = <ii|rho|jj>`. Its diagonal is measured directly (TOA), the first
//! off-diagonal is bounded from below by superposition-arm interference, and
//! the remaining entries are left to the positivity of `M`.
//!
//! Real completions suffice: if a Hermitian `M` is feasible, so is its
//! complex conjugate (the constraints only involve `Re M_ij` and the
//! diagonal), hence also `(M + conj M) / 2 = Re M`, which is real symmetric,
//! PSD, and has the same objective. The solver therefore works over real
//! symmetric matrices.

mod bootstrap;
mod sdp;

pub use bootstrap::{bootstrap_uncertainty, MIN_RESAMPLES};
pub use sdp::{fidelity_lower_bound_sdp, SdpBound};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::framing::DIM;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("inconsistent density-element bounds: {0}")]
    Infeasible(String),
    #[error("no counts for the {0} setting")]
    EmptySetting(&'static str),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Outcome probabilities of the two measurement settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct ProbabilityTables<T> {
    /// `P(i, j)`, time-of-arrival slots.
    pub toa: [[T; DIM]; DIM],
    /// `E(a, b)`, superposition projectors indexed as
    /// [`crate::framing::TsupProjector::index`].
    pub tsup: [[T; 8]; 8],
}

impl<T: Scalar> ProbabilityTables<T> {
    pub fn zeros() -> Self {
        Self {
            toa: [[T::zero(); DIM]; DIM],
            tsup: [[T::zero(); 8]; 8],
        }
    }

    pub fn validate(&self) -> Result<(), CertifyError> {
        let unit = |x: T| x >= T::zero() && x <= T::one();
        if !self.toa.iter().flatten().chain(self.tsup.iter().flatten()).all(|&x| unit(x)) {
            return Err(CertifyError::InvalidInput(
                "probabilities must lie in [0, 1]".into(),
            ));
        }
        let sum: T = self.toa.iter().flatten().fold(T::zero(), |s, &x| s + x);
        let tol = T::lit(1e-12).max(T::lit(64.0) * T::epsilon());
        if (sum - T::one()).abs() > tol {
            return Err(CertifyError::InvalidInput(format!(
                "TOA probabilities sum to {:?}",
                sum
            )));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ProbabilityTables<U> {
        let c = |x: T| U::lit(x.to_f64_lossy());
        ProbabilityTables {
            toa: self.toa.map(|r| r.map(c)),
            tsup: self.tsup.map(|r| r.map(c)),
        }
    }
}

/// What the tables imply about the Gram block `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct DensityElementBounds<T> {
    /// `p_i = P(i, i)`.
    pub p: [T; DIM],
    /// `L_i <= Re M_{i,i+1}` for i = 0..2. `l[3]` belongs to the (3, 0') pair
    /// and is diagnostic only.
    pub l: [T; DIM],
    /// `P(i, i+1)`; index 3 holds `P(3, 0)`.
    pub cross_plus: [T; DIM],
    /// `P(i+1, i)`; index 3 holds `P(0, 3)`.
    pub cross_minus: [T; DIM],
    /// Some bound exceeded its Cauchy-Schwarz cap and was clamped.
    pub clamped: bool,
}

impl<T: Scalar> DensityElementBounds<T> {
    pub fn cast<U: Scalar>(&self) -> DensityElementBounds<U> {
        let c = |x: T| U::lit(x.to_f64_lossy());
        DensityElementBounds {
            p: self.p.map(c),
            l: self.l.map(c),
            cross_plus: self.cross_plus.map(c),
            cross_minus: self.cross_minus.map(c),
            clamped: self.clamped,
        }
    }
}

fn raw_neighbor_bound<T: Scalar>(t: &ProbabilityTables<T>, i: usize) -> T {
    let (plus, minus) = (2 * i, 2 * i + 1);
    let e = &t.tsup;
    let visibility = (e[plus][plus] + e[minus][minus] - e[plus][minus] - e[minus][plus]) / T::lit(2.0);
    let j = (i + 1) % DIM;
    visibility - (t.toa[i][j] * t.toa[j][i]).sqrt()
}

/// Clamps `x` into `[-cap, cap]`. Only exceeding the cap is reported; a
/// bound below `-cap` is merely uninformative.
fn clamp_to_cap<T: Scalar>(x: T, cap: T) -> (T, bool) {
    if x > cap {
        // rounding-level excess is not worth a diagnostic
        (cap, x - cap > T::lit(16.0) * T::epsilon())
    } else if x < -cap {
        (-cap, false)
    } else {
        (x, false)
    }
}

/// Lower bound on `Re <ii|rho|i+1,i+1>`: the interference visibility of the
/// (i, i+1) superposition pair minus the cross-slot contribution, the latter
/// bounded by Cauchy-Schwarz. Clamped to `+-sqrt(p_i p_{i+1})`. `i = 3`
/// gives the (3, 0') diagnostic.
pub fn neighbor_offdiag_lower_bound<T: Scalar>(tables: &ProbabilityTables<T>, i: usize) -> T {
    assert!(i < DIM, "neighbor index {i} out of range");
    let j = (i + 1) % DIM;
    let cap = (tables.toa[i][i] * tables.toa[j][j]).sqrt();
    clamp_to_cap(raw_neighbor_bound(tables, i), cap).0
}

pub fn density_element_bounds<T: Scalar>(tables: &ProbabilityTables<T>) -> DensityElementBounds<T> {
    let p: [T; DIM] = std::array::from_fn(|i| tables.toa[i][i]);
    let mut clamped = false;
    let l = std::array::from_fn(|i| {
        let j = (i + 1) % DIM;
        let (v, c) = clamp_to_cap(raw_neighbor_bound(tables, i), (p[i] * p[j]).sqrt());
        // the diagnostic (3, 0') bound does not feed the fidelity
        clamped |= c && i + 1 < DIM;
        v
    });
    DensityElementBounds {
        p,
        l,
        cross_plus: std::array::from_fn(|i| tables.toa[i][(i + 1) % DIM]),
        cross_minus: std::array::from_fn(|i| tables.toa[(i + 1) % DIM][i]),
        clamped,
    }
}

/// Fidelity bound from 2x2 principal minors alone: neighbors at their lower
/// bounds, every other off-diagonal at `-sqrt(p_i p_j)`. Conservative; it
/// cannot exceed 1/4 when all `p_i = 1/4`.
pub fn fidelity_closed_form<T: Scalar>(b: &DensityElementBounds<T>) -> T {
    let two = T::lit(2.0);
    let diag = b.p.iter().fold(T::zero(), |s, &x| s + x);
    let near = b.l[..DIM - 1].iter().fold(T::zero(), |s, &x| s + x);
    let mut far = T::zero();
    for i in 0..DIM {
        for j in (i + 2)..DIM {
            far += (b.p[i] * b.p[j]).sqrt();
        }
    }
    (diag + two * near - two * far) / T::lit(4.0)
}

/// Largest `k` with `F > (k - 1) / 4`: fidelity strictly above `m / 4`
/// rules out Schmidt number `m`.
pub fn schmidt_number_certificate<T: Scalar>(fidelity: T) -> u8 {
    let mut k = 1;
    for m in 1..DIM {
        if fidelity > T::from_count(m as u64) / T::from_count(DIM as u64) {
            k = m as u8 + 1;
        }
    }
    k
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct Certificate<T> {
    pub bounds: DensityElementBounds<T>,
    pub fidelity_closed_form: T,
    pub fidelity_sdp: T,
    pub schmidt_number: u8,
    pub sdp: SdpBound<T>,
}

/// Bounds, both fidelity estimates and the certificate, in one call.
pub fn certify_tables<T: Scalar>(tables: &ProbabilityTables<T>) -> Result<Certificate<T>, CertifyError> {
    tables.validate()?;
    let bounds = density_element_bounds(tables);
    let sdp = fidelity_lower_bound_sdp(&bounds)?;
    Ok(Certificate {
        bounds,
        fidelity_closed_form: fidelity_closed_form(&bounds),
        fidelity_sdp: sdp.value,
        schmidt_number: schmidt_number_certificate(sdp.value),
        sdp,
    })
}

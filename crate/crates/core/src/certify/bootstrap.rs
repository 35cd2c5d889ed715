use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use super::{certify_tables, CertifyError};
use crate::framing::{tables_to_probabilities, CoincidenceTables, FramingError};
use crate::scalar::Scalar;

pub const MIN_RESAMPLES: usize = 100;

/// Multinomial draw of `counts.iter().sum()` trials by sequential
/// conditional binomials.
fn multinomial(counts: &[u64], rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut remaining_n: u64 = counts.iter().sum();
    let mut remaining_c = remaining_n;
    let mut out = Vec::with_capacity(counts.len());
    for &c in counts {
        if remaining_n == 0 || c == 0 {
            out.push(0);
            remaining_c -= c;
            continue;
        }
        let p = c as f64 / remaining_c as f64;
        let k = if p >= 1.0 {
            remaining_n
        } else {
            Binomial::new(remaining_n, p)
                .expect("probability in [0, 1)")
                .sample(rng)
        };
        out.push(k);
        remaining_n -= k;
        remaining_c -= c;
    }
    out
}

fn resample(tables: &CoincidenceTables, rng: &mut ChaCha8Rng) -> CoincidenceTables {
    let mut out = tables.clone();
    let toa: Vec<u64> = tables.toa.iter().flatten().copied().collect();
    for (cell, k) in out.toa.iter_mut().flatten().zip(multinomial(&toa, rng)) {
        *cell = k;
    }
    // split pairs are part of the superposition normalization and form
    // one extra cell
    let mut tsup: Vec<u64> = tables.tsup.iter().flatten().copied().collect();
    tsup.push(tables.totals.split_tsup);
    let drawn = multinomial(&tsup, rng);
    for (cell, &k) in out.tsup.iter_mut().flatten().zip(&drawn) {
        *cell = k;
    }
    out.totals.split_tsup = drawn[64];
    out
}

fn stream_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03)
}

/// Bootstrap standard error of the SDP fidelity bound: each setting's
/// counts are redrawn multinomially with their own total and the bound is
/// recomputed. Resample `r` uses its own RNG stream, so the result is
/// independent of scheduling.
pub fn bootstrap_uncertainty<T: Scalar>(
    tables: &CoincidenceTables,
    resamples: usize,
    seed: u64,
) -> Result<T, CertifyError> {
    if resamples < MIN_RESAMPLES {
        return Err(CertifyError::InvalidInput(format!(
            "at least {MIN_RESAMPLES} resamples required, got {resamples}"
        )));
    }
    tables_to_probabilities::<T>(tables).map_err(framing_to_certify)?;
    let values: Vec<Option<f64>> = (0..resamples as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, r));
            let t = resample(tables, &mut rng);
            let probs = tables_to_probabilities::<T>(&t).ok()?;
            certify_tables(&probs).ok().map(|c| c.fidelity_sdp.to_f64_lossy())
        })
        .collect();
    let values: Vec<f64> = values.into_iter().flatten().collect();
    if values.len() < 2 {
        return Err(CertifyError::EmptySetting("bootstrap"));
    }
    // shifted by the first value so identical resamples give exactly zero
    let n = values.len() as f64;
    let shift = values[0];
    let mean = values.iter().map(|v| v - shift).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|v| (v - shift - mean) * (v - shift - mean))
        .sum::<f64>()
        / (n - 1.0);
    Ok(T::lit(var.sqrt()))
}

pub(crate) fn framing_to_certify(e: FramingError) -> CertifyError {
    match e {
        FramingError::EmptySetting(s) => CertifyError::EmptySetting(s),
        other => CertifyError::InvalidInput(other.to_string()),
    }
}

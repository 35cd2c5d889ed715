use std::collections::HashMap;

use super::{DetectionEvent, TimetagError};

/// Dense histograms up to this many bins, a hash map beyond.
const DENSE_BIN_LIMIT: u64 = 1 << 22;

/// Peak must clear the non-peak mean by this many standard deviations.
const PEAK_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OffsetSearch {
    /// Differences tB - tA are histogrammed over +-this many picoseconds.
    pub search_half_width: i64,
    pub hist_bin: i64,
    /// Use every k-th event of stream A.
    pub decimation: usize,
}

impl Default for OffsetSearch {
    fn default() -> Self {
        Self {
            search_half_width: 10_000_000,
            hist_bin: 100,
            decimation: 1,
        }
    }
}

impl OffsetSearch {
    fn validate(&self) -> Result<(), TimetagError> {
        if self.hist_bin <= 0 || self.search_half_width <= 0 {
            return Err(TimetagError::InvalidSearch(
                "histogram bin and search half width must be positive".into(),
            ));
        }
        if self.hist_bin > self.search_half_width {
            return Err(TimetagError::InvalidSearch(
                "histogram bin exceeds search half width".into(),
            ));
        }
        if self.decimation == 0 {
            return Err(TimetagError::InvalidSearch("decimation must be >= 1".into()));
        }
        Ok(())
    }
}

/// Visits every difference tB - tA with |tB - tA| <= half_width, for every
/// `step`-th A event.
fn for_each_difference(
    a: &[DetectionEvent],
    b: &[DetectionEvent],
    half_width: i64,
    step: usize,
    mut f: impl FnMut(i64),
) {
    let mut lo = 0usize;
    for ev in a.iter().step_by(step) {
        let ta = ev.timestamp as i64;
        while lo < b.len() && (b[lo].timestamp as i64) < ta - half_width {
            lo += 1;
        }
        for eb in &b[lo..] {
            let d = eb.timestamp as i64 - ta;
            if d > half_width {
                break;
            }
            f(d);
        }
    }
}

/// Cross-correlation offset estimate: the center of the most populated
/// histogram bin of tB - tA. The peak must exceed mean + 5 sd of the other
/// bins in the search range, with the sd floored at one count so that sparse
/// histograms cannot fake a peak out of a couple of coincidences.
pub fn estimate_offset(
    a: &[DetectionEvent],
    b: &[DetectionEvent],
    search: &OffsetSearch,
) -> Result<i64, TimetagError> {
    search.validate()?;
    if a.is_empty() || b.is_empty() {
        return Err(TimetagError::NoPeak);
    }
    let h = search.hist_bin;
    let w = search.search_half_width;
    let first_bin = (-w).div_euclid(h);
    let last_bin = w.div_euclid(h);
    let nbins = (last_bin - first_bin + 1) as u64;

    let mut total: u64 = 0;
    let (peak_bin, peak, sum_sq) = if nbins <= DENSE_BIN_LIMIT {
        let mut hist = vec![0u32; nbins as usize];
        for_each_difference(a, b, w, search.decimation, |d| {
            hist[(d.div_euclid(h) - first_bin) as usize] += 1;
            total += 1;
        });
        let mut best = (first_bin, 0u64);
        let mut sum_sq = 0f64;
        for (i, &c) in hist.iter().enumerate() {
            let c = c as u64;
            sum_sq += (c * c) as f64;
            if c > best.1 {
                best = (first_bin + i as i64, c);
            }
        }
        (best.0, best.1, sum_sq)
    } else {
        let mut hist: HashMap<i64, u64> = HashMap::new();
        for_each_difference(a, b, w, search.decimation, |d| {
            *hist.entry(d.div_euclid(h)).or_default() += 1;
            total += 1;
        });
        let mut best = (first_bin, 0u64);
        let mut sum_sq = 0f64;
        for (&bin, &c) in &hist {
            sum_sq += (c * c) as f64;
            if c > best.1 || (c == best.1 && bin < best.0) {
                best = (bin, c);
            }
        }
        (best.0, best.1, sum_sq)
    };

    if peak == 0 || nbins < 2 {
        return Err(TimetagError::NoPeak);
    }
    let rest = (nbins - 1) as f64;
    let mean = (total - peak) as f64 / rest;
    let var = ((sum_sq - (peak * peak) as f64) / rest - mean * mean).max(0.0);
    let sd = var.sqrt().max(1.0);
    if (peak as f64) <= mean + PEAK_SIGMAS * sd {
        return Err(TimetagError::NoPeak);
    }
    Ok(peak_bin * h + h / 2)
}

/// Sub-bin refinement: the median of all differences within
/// `half_width` of a coarse estimate.
pub fn refine_offset(
    a: &[DetectionEvent],
    b: &[DetectionEvent],
    coarse: i64,
    half_width: i64,
) -> i64 {
    let mut diffs = Vec::new();
    let mut lo = 0usize;
    for ev in a {
        let center = ev.timestamp as i64 + coarse;
        while lo < b.len() && (b[lo].timestamp as i64) < center - half_width {
            lo += 1;
        }
        for eb in &b[lo..] {
            let d = eb.timestamp as i64 - ev.timestamp as i64;
            if d > coarse + half_width {
                break;
            }
            diffs.push(d);
        }
    }
    if diffs.is_empty() {
        return coarse;
    }
    let mid = diffs.len() / 2;
    let (_, m, _) = diffs.select_nth_unstable(mid);
    *m
}

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use timebin::analysis::{sweep, AnalysisConfig, CertificateRecord};
use timebin::certify::DensityElementBounds;
use timebin::sim::{generate_streams, SourceModel};

/// Brute-force minimum of `1/4 sum_ij sqrt(p_i p_j) C_ij` over 4x4
/// correlation matrices with `C_{i,i+1} >= L_i / sqrt(p_i p_{i+1})`.
///
/// Correlation matrices are parameterized by a D-vine on 0-1-2-3: the three
/// neighbor correlations, the partial correlations rho_02|1, rho_13|2 and
/// rho_03|12, each free in [-1, 1] and mapped to a valid matrix by the
/// partial-correlation recursion. The objective is affine in rho_03|12, so
/// that coordinate is taken at whichever endpoint is smaller. The other five
/// are searched on a grid, then refined by compass search from the best
/// grid points.
pub fn brute_force_fidelity(b: &DensityElementBounds<f64>) -> f64 {
    let w: Vec<f64> = b.p.iter().map(|x| x.max(0.0).sqrt()).collect();
    let lower: Vec<f64> = (0..3)
        .map(|i| {
            let s = w[i] * w[i + 1];
            if s <= 0.0 {
                -1.0
            } else {
                (b.l[i] / s).clamp(-1.0, 1.0)
            }
        })
        .collect();
    let lo = [lower[0], lower[1], lower[2], -1.0, -1.0];
    let hi = [1.0; 5];
    let f = |x: &[f64; 5]| objective(&w, x);

    const G: usize = 11;
    let mut scored: Vec<(f64, [f64; 5])> = Vec::with_capacity(G.pow(5));
    let mut idx = [0usize; 5];
    loop {
        let mut x = [0.0; 5];
        for d in 0..5 {
            x[d] = lo[d] + (hi[d] - lo[d]) * idx[d] as f64 / (G - 1) as f64;
        }
        scored.push((f(&x), x));
        let mut d = 0;
        loop {
            idx[d] += 1;
            if idx[d] < G {
                break;
            }
            idx[d] = 0;
            d += 1;
            if d == 5 {
                break;
            }
        }
        if d == 5 {
            break;
        }
    }
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut best = f64::INFINITY;
    for &(v0, x0) in scored.iter().take(20) {
        let mut x = x0;
        let mut v = v0;
        let mut step = (0..5).map(|d| (hi[d] - lo[d]) / (G - 1) as f64).collect::<Vec<_>>();
        while step.iter().cloned().fold(0.0, f64::max) > 1e-10 {
            let mut improved = false;
            for d in 0..5 {
                for dir in [-1.0, 1.0] {
                    let mut y = x;
                    y[d] = (y[d] + dir * step[d]).clamp(lo[d], hi[d]);
                    let fy = f(&y);
                    if fy < v - 1e-15 {
                        x = y;
                        v = fy;
                        improved = true;
                    }
                }
            }
            if !improved {
                step.iter_mut().for_each(|s| *s *= 0.5);
            }
        }
        best = best.min(v);
    }
    best
}

fn safe_partial(r_ab: f64, r_ac: f64, r_bc: f64) -> f64 {
    let d = ((1.0 - r_ac * r_ac) * (1.0 - r_bc * r_bc)).max(0.0).sqrt();
    if d < 1e-300 {
        0.0
    } else {
        ((r_ab - r_ac * r_bc) / d).clamp(-1.0, 1.0)
    }
}

fn join(partial: f64, r_ac: f64, r_bc: f64) -> f64 {
    partial * ((1.0 - r_ac * r_ac) * (1.0 - r_bc * r_bc)).max(0.0).sqrt() + r_ac * r_bc
}

/// Correlation matrix from (c01, c12, c23, rho_02|1, rho_13|2) and
/// rho_03|12.
pub fn vine_matrix(x: &[f64; 5], r03_12: f64) -> [[f64; 4]; 4] {
    let [c01, c12, c23, r02_1, r13_2] = *x;
    let r02 = join(r02_1, c01, c12);
    let r13 = join(r13_2, c12, c23);
    // rho_23|1 from the first-order correlations
    let r23_1 = safe_partial(c23, c12, r13);
    let r03_1 = join(r03_12, r02_1, r23_1);
    let r03 = join(r03_1, c01, r13);
    [
        [1.0, c01, r02, r03],
        [c01, 1.0, c12, r13],
        [r02, c12, 1.0, c23],
        [r03, r13, c23, 1.0],
    ]
}

fn weighted(w: &[f64], c: &[[f64; 4]; 4]) -> f64 {
    let mut s = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            s += w[i] * w[j] * c[i][j];
        }
    }
    s / 4.0
}

fn objective(w: &[f64], x: &[f64; 5]) -> f64 {
    weighted(w, &vine_matrix(x, -1.0)).min(weighted(w, &vine_matrix(x, 1.0)))
}

pub fn bounds(p: [f64; 4], l: [f64; 4]) -> DensityElementBounds<f64> {
    DensityElementBounds {
        p,
        l,
        cross_plus: [0.0; 4],
        cross_minus: [0.0; 4],
        clamped: false,
    }
}

/// Random admissible bounds: a random diagonal with total mass in
/// [0.5, 1] and neighbor bounds anywhere in their Cauchy-Schwarz range,
/// biased towards the top where the completion problem is tight.
pub fn random_bounds(rng: &mut ChaCha8Rng) -> DensityElementBounds<f64> {
    let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..1.0)).collect();
    let mass = rng.random_range(0.5..1.0);
    let total: f64 = raw.iter().sum();
    let p: [f64; 4] = std::array::from_fn(|i| raw[i] / total * mass);
    let l: [f64; 4] = std::array::from_fn(|i| {
        if i == 3 {
            return 0.0;
        }
        let cap = (p[i] * p[i + 1]).sqrt();
        let u: f64 = rng.random_range(0.0..1.0);
        cap * (1.0 - 2.0 * u * u)
    });
    bounds(p, l)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Simulates and analyzes a model as one block with a fixed offset, one
/// record per bin width.
pub fn simulate_and_sweep(model: &SourceModel, delta_ts: &[u64], resamples: usize) -> Vec<CertificateRecord> {
    let s = generate_streams(model).expect("valid model");
    let cfg = AnalysisConfig {
        delta_ts: delta_ts.to_vec(),
        block_len: ((model.duration + 1.0) * 1e12) as u64,
        offset: Some(model.clock_offset),
        resamples,
        ..Default::default()
    };
    sweep(&s.alice, &s.bob, &s.channels, &cfg).expect("analysis runs")
}

/// Frame tables of a simulated run, clocks aligned with the model's offset.
pub fn simulated_tables(model: &SourceModel, delta_t: u64) -> timebin::framing::CoincidenceTables {
    use timebin::framing::{accumulate_tables, FrameConfig, PartyClicks};
    use timebin::timetag::{match_coincidences, Party};
    let s = generate_streams(model).expect("valid model");
    let cfg = FrameConfig::with_delta_t(delta_t);
    let (ca, cb) = (s.channels.party(Party::A), s.channels.party(Party::B));
    let pairs = match_coincidences(&s.alice, &s.bob, model.clock_offset, cfg.window);
    accumulate_tables(
        &pairs,
        PartyClicks { events: &s.alice, channels: &ca, offset: 0 },
        PartyClicks { events: &s.bob, channels: &cb, offset: model.clock_offset },
        &cfg,
    )
}

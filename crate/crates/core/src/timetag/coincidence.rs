use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DetectionEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoincidencePair {
    pub a: DetectionEvent,
    pub b: DetectionEvent,
    /// tB - tA after removing the clock offset.
    pub delta: i64,
}

impl CoincidencePair {
    /// B timestamp on A's clock.
    #[inline]
    pub fn b_time_on_a_clock(&self) -> i64 {
        self.a.timestamp as i64 + self.delta
    }
}

/// Candidate ordering: smallest |delta| first, ties to the earlier B event,
/// then to the earlier A event.
type CandidateKey = (u64, usize, usize);

fn greedy(
    a: &[DetectionEvent],
    b: &[DetectionEvent],
    a_base: usize,
    b_base: usize,
    offset: i64,
    window: i64,
    out: &mut Vec<CoincidencePair>,
) {
    let mut cands: Vec<CandidateKey> = Vec::new();
    let mut lo = 0usize;
    for (i, ea) in a.iter().enumerate() {
        let ta = ea.timestamp as i64;
        while lo < b.len() && (b[lo].timestamp as i64 - offset) < ta - window {
            lo += 1;
        }
        for (j, eb) in b[lo..].iter().enumerate() {
            let d = eb.timestamp as i64 - offset - ta;
            if d > window {
                break;
            }
            cands.push((d.unsigned_abs(), b_base + lo + j, a_base + i));
        }
    }
    if cands.is_empty() {
        return;
    }
    cands.sort_unstable();
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let start = out.len();
    for (_, jb, ia) in cands {
        let (ia, jb) = (ia - a_base, jb - b_base);
        if used_a[ia] || used_b[jb] {
            continue;
        }
        used_a[ia] = true;
        used_b[jb] = true;
        let (ea, eb) = (a[ia], b[jb]);
        out.push(CoincidencePair {
            a: ea,
            b: eb,
            delta: eb.timestamp as i64 - offset - ea.timestamp as i64,
        });
    }
    out[start..].sort_unstable_by_key(|p| (p.a.timestamp, p.a.channel, p.b.timestamp, p.b.channel));
}

/// Single pass over the whole input: all candidates globally sorted, then
/// accepted greedily. Quadratic memory in the local density only; used as
/// the definition that the parallel matcher must reproduce.
pub fn match_coincidences_reference(
    a: &[DetectionEvent],
    b: &[DetectionEvent],
    offset: i64,
    window: u64,
) -> Vec<CoincidencePair> {
    let mut out = Vec::new();
    greedy(a, b, 0, 0, offset, window as i64, &mut out);
    out.sort_unstable_by_key(|p| (p.a.timestamp, p.a.channel, p.b.timestamp, p.b.channel));
    out
}

/// Index ranges of independent matching problems: consecutive events of the
/// merged timeline more than `window` apart can never be paired across the
/// gap, so greedy decisions on either side cannot interact.
fn components(
    a: &[DetectionEvent],
    b: &[DetectionEvent],
    offset: i64,
    window: i64,
) -> Vec<(usize, usize, usize, usize)> {
    let mut comps = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ai, mut bj) = (0usize, 0usize);
    let mut last: Option<i64> = None;
    while i < a.len() || j < b.len() {
        let ta = a.get(i).map(|e| e.timestamp as i64);
        let tb = b.get(j).map(|e| e.timestamp as i64 - offset);
        let (t, from_a) = match (ta, tb) {
            (Some(x), Some(y)) if x <= y => (x, true),
            (Some(_), Some(y)) => (y, false),
            (Some(x), None) => (x, true),
            (None, Some(y)) => (y, false),
            (None, None) => unreachable!(),
        };
        if let Some(prev) = last {
            if t - prev > window {
                if i > ai && j > bj {
                    comps.push((ai, i, bj, j));
                }
                ai = i;
                bj = j;
            }
        }
        last = Some(t);
        if from_a {
            i += 1;
        } else {
            j += 1;
        }
    }
    if i > ai && j > bj {
        comps.push((ai, i, bj, j));
    }
    comps
}

/// Greedy nearest-neighbour pairing of A and offset-corrected B events with
/// |delta| <= window. Each event is used at most once; candidates are taken
/// in order of |delta|, ties to the earlier B event. Independent stretches of
/// the timeline are matched in parallel and concatenated in time order, which
/// reproduces [`match_coincidences_reference`] exactly. Output is sorted by
/// A timestamp.
pub fn match_coincidences(
    a: &[DetectionEvent],
    b: &[DetectionEvent],
    offset: i64,
    window: u64,
) -> Vec<CoincidencePair> {
    let window = window as i64;
    let comps = components(a, b, offset, window);
    let chunk = (comps.len() / (rayon::current_num_threads() * 8)).max(1024);
    comps
        .par_chunks(chunk)
        .map(|cs| {
            let mut out = Vec::new();
            for &(a0, a1, b0, b1) in cs {
                greedy(&a[a0..a1], &b[b0..b1], a0, b0, offset, window, &mut out);
            }
            out
        })
        .collect::<Vec<_>>()
        .concat()
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use super::state::{basis, superposition, IsotropicState, EXT};
use super::{SimError, SourceModel};
use crate::framing::DIM;
use crate::timetag::{Arm, ChannelMap, DetectionEvent, Outcome, Party, Picos};

const SEGMENT_PS: u64 = 1_000_000_000_000;
/// Superposition-arm detection slots: a click in slot s superposes bins
/// s - 1 and s, so s = 0 and s = 4 reach one bin outside the frame.
const TSUP_SLOTS: usize = DIM + 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulatedStreams {
    pub alice: Vec<DetectionEvent>,
    pub bob: Vec<DetectionEvent>,
    pub channels: ChannelMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Local {
    Toa(u8),
    /// Detection slot and interference sign (+1 bright at D).
    Tsup(u8, i8),
}

impl Local {
    fn all(arm: Arm) -> Vec<Local> {
        match arm {
            Arm::Toa => (0..DIM as u8).map(Local::Toa).collect(),
            Arm::Tsup => (0..TSUP_SLOTS as u8)
                .flat_map(|s| [Local::Tsup(s, 1), Local::Tsup(s, -1)])
                .collect(),
        }
    }

    /// POVM element `weight * |x><x|` of this outcome, given its arm.
    fn element(&self) -> (f64, [f64; EXT]) {
        match *self {
            Local::Toa(i) => (1.0, basis(i as i32)),
            Local::Tsup(s, sign) => (0.5, superposition(s as i32 - 1, sign)),
        }
    }

    fn slot(&self) -> u64 {
        match *self {
            Local::Toa(i) => i as u64,
            Local::Tsup(s, _) => s as u64,
        }
    }
}

/// Joint outcome distribution for one pair of arm choices.
struct JointTable {
    outcomes: Vec<(Local, Local)>,
    sampler: WeightedAliasIndex<f64>,
}

impl JointTable {
    fn new(state: &IsotropicState<f64>, arm_a: Arm, arm_b: Arm) -> Self {
        let mut outcomes = Vec::new();
        let mut weights = Vec::new();
        for a in Local::all(arm_a) {
            for b in Local::all(arm_b) {
                let (wa, va) = a.element();
                let (wb, vb) = b.element();
                outcomes.push((a, b));
                weights.push((wa * wb * state.expectation(&va, &vb)).max(0.0));
            }
        }
        let sampler = WeightedAliasIndex::new(weights).expect("state has positive weight");
        Self { outcomes, sampler }
    }
}

struct Sampler {
    tables: [JointTable; 4],
    channels: ChannelMap,
    tau: u64,
    jitter: Option<Normal<f64>>,
    model: SourceModel,
}

const ARMS: [Arm; 2] = [Arm::Toa, Arm::Tsup];

impl Sampler {
    fn new(model: &SourceModel) -> Self {
        let state = model.state::<f64>();
        let tables = std::array::from_fn(|k| JointTable::new(&state, ARMS[k / 2], ARMS[k % 2]));
        Self {
            tables,
            channels: ChannelMap::standard(),
            tau: model.tau_mzi,
            jitter: (model.jitter_sigma > 0.0)
                .then(|| Normal::new(0.0, model.jitter_sigma).expect("finite sigma")),
            model: *model,
        }
    }

    fn channel(&self, party: Party, arm: Arm, local: Local, horizontal: bool) -> u16 {
        let outcome = match local {
            Local::Toa(_) if horizontal => Outcome::H,
            Local::Toa(_) => Outcome::V,
            Local::Tsup(_, s) if s > 0 => Outcome::D,
            Local::Tsup(_, _) => Outcome::A,
        };
        self.channels
            .channel_for(party, arm, outcome)
            .expect("standard map covers every role")
    }

    fn detect(&self, t: i64, rng: &mut ChaCha8Rng) -> Option<Picos> {
        let t = match &self.jitter {
            Some(n) => t + n.sample(rng).round() as i64,
            None => t,
        };
        (t >= 0).then_some(t as Picos)
    }

    fn segment(&self, index: u64, start: u64, len: u64) -> (Vec<DetectionEvent>, Vec<DetectionEvent>) {
        let m = &self.model;
        let mut rng = ChaCha8Rng::seed_from_u64(segment_seed(m.seed, index));
        let seconds = len as f64 / SEGMENT_PS as f64;
        let (mut alice, mut bob) = (Vec::new(), Vec::new());
        let offset = m.clock_offset;

        let pairs = poisson(m.pair_rate * seconds, &mut rng);
        let interval = DIM as u64 * self.tau;
        for _ in 0..pairs {
            let t = start + rng.random_range(0..len);
            let base = (t / interval) * interval + t % self.tau;
            let arm_a = rng.random_range(0..2usize);
            let arm_b = rng.random_range(0..2usize);
            let horizontal = rng.random_bool(0.5);
            let table = &self.tables[arm_a * 2 + arm_b];
            let (la, lb) = table.outcomes[table.sampler.sample(&mut rng)];
            let keep_a = !rng.random_bool(m.loss_a);
            let keep_b = !rng.random_bool(m.loss_b);
            if keep_a {
                if let Some(ta) = self.detect((base + la.slot() * self.tau) as i64, &mut rng) {
                    alice.push(DetectionEvent::new(ta, self.channel(Party::A, ARMS[arm_a], la, horizontal)));
                }
            }
            if keep_b {
                let tb = (base + lb.slot() * self.tau) as i64 + offset;
                if let Some(tb) = self.detect(tb, &mut rng) {
                    bob.push(DetectionEvent::new(tb, self.channel(Party::B, ARMS[arm_b], lb, horizontal)));
                }
            }
        }

        for party in [Party::A, Party::B] {
            for ch in self.channels.party_channel_ids(party) {
                let n = poisson(m.background_rate * seconds, &mut rng);
                for _ in 0..n {
                    let t = (start + rng.random_range(0..len)) as i64;
                    match party {
                        Party::A => alice.push(DetectionEvent::new(t as Picos, ch)),
                        Party::B => {
                            if t + offset >= 0 {
                                bob.push(DetectionEvent::new((t + offset) as Picos, ch));
                            }
                        }
                    }
                }
            }
        }
        (alice, bob)
    }
}

fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite mean").sample(rng) as u64
}

fn segment_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Time-tag streams for the model, using the standard channel map.
///
/// Pair emissions form a Poisson process. Each pair is placed in the frame
/// starting at its emission time's interval and phase; both photons pick an
/// arm with probability 1/2 and their joint outcome is drawn exactly from
/// the state over the product of the two arms' POVMs. TOA photons share a
/// uniformly random polarization. Loss, jitter and per-detector Poisson
/// background follow. Generation runs over one-second segments with derived
/// seeds, so the output does not depend on the thread count.
pub fn generate_streams(model: &SourceModel) -> Result<SimulatedStreams, SimError> {
    model.validate()?;
    let total = (model.duration * SEGMENT_PS as f64).round() as u64;
    let sampler = Sampler::new(model);
    let segments = total.div_ceil(SEGMENT_PS);
    let parts: Vec<_> = (0..segments)
        .into_par_iter()
        .map(|i| {
            let start = i * SEGMENT_PS;
            sampler.segment(i, start, SEGMENT_PS.min(total - start))
        })
        .collect();
    let (mut alice, mut bob): (Vec<_>, Vec<_>) = (Vec::new(), Vec::new());
    for (a, b) in parts {
        alice.extend(a);
        bob.extend(b);
    }
    alice.par_sort_unstable();
    bob.par_sort_unstable();
    Ok(SimulatedStreams {
        alice,
        bob,
        channels: sampler.channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_tables_are_normalized() {
        for v in [0.0, 0.37, 1.0] {
            let s = IsotropicState::new(v);
            for a in ARMS {
                for b in ARMS {
                    let t = JointTable::new(&s, a, b);
                    let total: f64 = t
                        .outcomes
                        .iter()
                        .map(|(x, y)| {
                            let (wa, va) = x.element();
                            let (wb, vb) = y.element();
                            wa * wb * s.expectation(&va, &vb)
                        })
                        .sum();
                    assert!((total - 1.0).abs() < 1e-12, "{a:?} {b:?} {total}");
                }
            }
        }
    }

    #[test]
    fn deterministic_and_sorted() {
        let m = SourceModel {
            pair_rate: 2000.0,
            background_rate: 500.0,
            jitter_sigma: 50.0,
            duration: 2.5,
            seed: 11,
            clock_offset: -1_000,
            ..Default::default()
        };
        let x = generate_streams(&m).unwrap();
        let y = generate_streams(&m).unwrap();
        assert_eq!(x, y);
        assert!(x.alice.windows(2).all(|w| w[0] <= w[1]));
        assert!(x.bob.windows(2).all(|w| w[0] <= w[1]));
        assert!(x.alice.len() > 4000 && x.bob.len() > 4000);
        let z = generate_streams(&SourceModel { seed: 12, ..m }).unwrap();
        assert_ne!(x, z);
    }

    #[test]
    fn ideal_toa_pairs_share_slot_and_polarization() {
        let m = SourceModel { pair_rate: 1000.0, duration: 1.0, seed: 5, ..Default::default() };
        let s = generate_streams(&m).unwrap();
        assert_eq!(s.alice.len(), s.bob.len());
        let mut checked = 0;
        for a in s.alice.iter().filter(|e| e.channel < 2) {
            let lo = s.bob.partition_point(|b| b.timestamp < a.timestamp);
            for b in s.bob[lo..].iter().take_while(|b| b.timestamp == a.timestamp) {
                if b.channel < 6 {
                    assert_eq!(a.channel + 4, b.channel);
                    checked += 1;
                }
            }
        }
        assert!(checked > 100, "{checked}");
    }

    #[test]
    fn zero_duration_is_empty() {
        let s = generate_streams(&SourceModel { duration: 0.0, ..Default::default() }).unwrap();
        assert!(s.alice.is_empty() && s.bob.is_empty());
    }
}

//! Block-wise pipeline from two raw streams to per-block certificates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{bootstrap_uncertainty, certify_tables};
use crate::error::Error;
use crate::framing::{
    accumulate_tables, tables_to_probabilities, FrameConfig, MultiClickPolicy, PartyClicks, DIM,
};
use crate::timetag::{
    estimate_offset, match_coincidences, refine_offset, ChannelMap, CoincidencePair,
    DetectionEvent, OffsetSearch, Party, PartyChannels, Picos, TimetagError,
};

pub const PS_PER_SECOND: Picos = 1_000_000_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    /// Frame geometry, window, policy and seed; `delta_t` is overridden by
    /// `delta_ts`.
    pub frame: FrameConfig,
    pub delta_ts: Vec<Picos>,
    pub block_len: Picos,
    /// Fixed clock offset; estimated per block when `None`.
    pub offset: Option<i64>,
    pub search: OffsetSearch,
    /// Half width of the median refinement around the histogram peak.
    pub refine_half_width: i64,
    /// Bootstrap resamples per certificate; 0 disables the error bar.
    pub resamples: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        let frame = FrameConfig::default();
        Self {
            delta_ts: vec![frame.delta_t],
            frame,
            block_len: 200 * PS_PER_SECOND,
            offset: None,
            search: OffsetSearch::default(),
            refine_half_width: 1_000,
            resamples: 200,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.block_len == 0 {
            return Err(Error::Config("block length must be positive".into()));
        }
        if self.delta_ts.is_empty() {
            return Err(Error::Config("no delta_t given".into()));
        }
        for &dt in &self.delta_ts {
            FrameConfig { delta_t: dt, ..self.frame }.validate()?;
        }
        if self.resamples != 0 && self.resamples < crate::certify::MIN_RESAMPLES {
            return Err(Error::Config(format!(
                "bootstrap needs at least {} resamples",
                crate::certify::MIN_RESAMPLES
            )));
        }
        if self.refine_half_width < 0 {
            return Err(Error::Config("refinement half width must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub clamped: bool,
    pub multi_click_count: u64,
    pub discarded_slot0: u64,
    /// Matched coincidences in the block (all settings).
    pub pairs: u64,
    /// Why the fidelity fields are empty, if they are.
    pub error: Option<String>,
}

/// One certificate, as emitted by `analyze` and `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub block_index: u64,
    pub block_start_ps: Picos,
    pub block_len_ps: Picos,
    pub delta_t_ps: Picos,
    pub window_ps: Picos,
    pub policy: MultiClickPolicy,
    pub offset_ps: Option<i64>,
    pub p: Option<[f64; DIM]>,
    #[serde(rename = "L")]
    pub l: Option<[f64; DIM]>,
    #[serde(rename = "F_cf")]
    pub f_cf: Option<f64>,
    #[serde(rename = "F_sdp")]
    pub f_sdp: Option<f64>,
    pub schmidt_number: Option<u8>,
    pub stderr: Option<f64>,
    pub diagnostics: Diagnostics,
}

/// Rounds to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// Number of blocks covering stream A: the last A timestamp decides, so a
/// positive clock offset on B cannot add a block.
pub fn block_count(alice: &[DetectionEvent], block_len: Picos) -> u64 {
    match alice.last() {
        Some(e) => (e.timestamp + 1).div_ceil(block_len),
        None => 0,
    }
}

fn time_slice(events: &[DetectionEvent], lo: i64, hi: i64) -> &[DetectionEvent] {
    let a = events.partition_point(|e| (e.timestamp as i64) < lo);
    let b = events.partition_point(|e| (e.timestamp as i64) < hi);
    &events[a..b.max(a)]
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct BlockInput<'a> {
    index: u64,
    start: Picos,
    alice: &'a [DetectionEvent],
    bob: &'a [DetectionEvent],
    offset: Result<i64, TimetagError>,
    pairs: Vec<CoincidencePair>,
}

fn prepare_block<'a>(
    index: u64,
    alice: &'a [DetectionEvent],
    bob: &'a [DetectionEvent],
    cfg: &AnalysisConfig,
) -> BlockInput<'a> {
    let start = index * cfg.block_len;
    let (s, e) = (start as i64, (start + cfg.block_len) as i64);
    let a = time_slice(alice, s, e);
    let offset = match cfg.offset {
        Some(o) => Ok(o),
        None => {
            let w = cfg.search.search_half_width;
            let raw_b = time_slice(bob, s - w, e + w);
            estimate_offset(a, raw_b, &cfg.search)
                .map(|coarse| refine_offset(a, raw_b, coarse, cfg.refine_half_width))
        }
    };
    let (b, pairs) = match offset {
        Ok(o) => {
            let b = time_slice(bob, s + o, e + o);
            let pairs = match_coincidences(a, b, o, cfg.frame.window);
            (b, pairs)
        }
        Err(_) => (&bob[..0], Vec::new()),
    };
    BlockInput {
        index,
        start,
        alice: a,
        bob: b,
        offset,
        pairs,
    }
}

fn certify_block(
    block: &BlockInput,
    delta_t: Picos,
    channels: (&PartyChannels, &PartyChannels),
    cfg: &AnalysisConfig,
) -> CertificateRecord {
    let frame = FrameConfig { delta_t, ..cfg.frame };
    let mut rec = CertificateRecord {
        block_index: block.index,
        block_start_ps: block.start,
        block_len_ps: cfg.block_len,
        delta_t_ps: delta_t,
        window_ps: frame.window,
        policy: frame.policy,
        offset_ps: block.offset.as_ref().ok().copied(),
        p: None,
        l: None,
        f_cf: None,
        f_sdp: None,
        schmidt_number: None,
        stderr: None,
        diagnostics: Diagnostics {
            pairs: block.pairs.len() as u64,
            ..Default::default()
        },
    };
    let offset = match &block.offset {
        Ok(o) => *o,
        Err(e) => {
            rec.diagnostics.error = Some(format!("{e:?}"));
            return rec;
        }
    };
    let tables = accumulate_tables(
        &block.pairs,
        PartyClicks {
            events: block.alice,
            channels: channels.0,
            offset: 0,
        },
        PartyClicks {
            events: block.bob,
            channels: channels.1,
            offset,
        },
        &frame,
    );
    rec.diagnostics.multi_click_count = tables.multi_click_count;
    rec.diagnostics.discarded_slot0 = tables.discarded_slot0;
    let probs = match tables_to_probabilities::<f64>(&tables) {
        Ok(p) => p,
        Err(e) => {
            rec.diagnostics.error = Some(format!("{e:?}"));
            return rec;
        }
    };
    let cert = match certify_tables(&probs) {
        Ok(c) => c,
        Err(e) => {
            rec.diagnostics.error = Some(format!("{e:?}"));
            return rec;
        }
    };
    rec.diagnostics.clamped = cert.bounds.clamped;
    rec.p = Some(cert.bounds.p.map(round12));
    rec.l = Some(cert.bounds.l.map(round12));
    rec.f_cf = Some(round12(cert.fidelity_closed_form));
    rec.f_sdp = Some(round12(cert.fidelity_sdp));
    rec.schmidt_number = Some(cert.schmidt_number);
    if cfg.resamples > 0 {
        let seed = mix(cfg.frame.seed, block.index, delta_t);
        rec.stderr = bootstrap_uncertainty::<f64>(&tables, cfg.resamples, seed)
            .ok()
            .map(round12);
    }
    rec
}

/// Certificates for every block and every `delta_t` in the config, ordered
/// by (block, position in `delta_ts`). Coincidences are matched once per
/// block and shared across bin widths.
pub fn sweep(
    alice: &[DetectionEvent],
    bob: &[DetectionEvent],
    channels: &ChannelMap,
    cfg: &AnalysisConfig,
) -> Result<Vec<CertificateRecord>, Error> {
    cfg.validate()?;
    let ca = channels.party(Party::A);
    let cb = channels.party(Party::B);
    ca.check_stream(alice)?;
    cb.check_stream(bob)?;
    let n = block_count(alice, cfg.block_len);
    let per_block: Vec<Vec<CertificateRecord>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let block = prepare_block(i, alice, bob, cfg);
            cfg.delta_ts
                .par_iter()
                .map(|&dt| certify_block(&block, dt, (&ca, &cb), cfg))
                .collect()
        })
        .collect();
    Ok(per_block.into_iter().flatten().collect())
}

/// [`sweep`] at the single bin width `cfg.frame.delta_t`.
pub fn analyze(
    alice: &[DetectionEvent],
    bob: &[DetectionEvent],
    channels: &ChannelMap,
    cfg: &AnalysisConfig,
) -> Result<Vec<CertificateRecord>, Error> {
    let cfg = AnalysisConfig {
        delta_ts: vec![cfg.frame.delta_t],
        ..cfg.clone()
    };
    sweep(alice, bob, channels, &cfg)
}

//! Synthetic line bundles reproducing three density-plot ambiguities, with a
//! ground-truth pattern label per line.
//!
//! Every generator works in the unit square and emits 32-vertex polylines.
//! Bundles get a per-line vertical offset (the bundle thickness) plus small
//! per-vertex jitter.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{LineKind, LineSet, Point};

pub const VERTICES: usize = 32;
const JITTER: f64 = 0.0015;
const BAND_SPREAD: f64 = 0.004;
const FAN_HALF_HEIGHT: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContinuationMode {
    Crossing,
    Touching,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SynthParams {
    Illusory { n_pattern: usize, n_noise: usize, fanout: f64 },
    Continuation { n_per_trend: usize, mode: ContinuationMode },
    Disconnected { n_per_trend: usize, separation: f64 },
}

impl SynthParams {
    pub fn illusory() -> Self {
        SynthParams::Illusory { n_pattern: 400, n_noise: 100, fanout: 1.0 }
    }

    pub fn continuation(mode: ContinuationMode) -> Self {
        SynthParams::Continuation { n_per_trend: 200, mode }
    }

    pub fn disconnected() -> Self {
        SynthParams::Disconnected { n_per_trend: 200, separation: 0.5 }
    }

    pub fn generate(&self, seed: u64) -> Result<LabeledLineSet> {
        match *self {
            SynthParams::Illusory { n_pattern, n_noise, fanout } => gen_illusory(n_pattern, n_noise, fanout, seed),
            SynthParams::Continuation { n_per_trend, mode } => gen_continuation(n_per_trend, mode, seed),
            SynthParams::Disconnected { n_per_trend, separation } => gen_disconnected(n_per_trend, separation, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLineSet {
    pub lineset: LineSet,
    /// Generator pattern of each line.
    pub labels: Vec<u32>,
    pub params: SynthParams,
    pub seed: u64,
}

impl LabeledLineSet {
    /// Long-format trajectory CSV with header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("line_id,x,y\n");
        for line in self.lineset.lines() {
            for p in &line.vertices {
                let _ = writeln!(out, "{},{},{}", line.id, p.x, p.y);
            }
        }
        out
    }

    pub fn labels_csv(&self) -> String {
        let mut out = String::from("line_id,label\n");
        for (i, l) in self.labels.iter().enumerate() {
            let _ = writeln!(out, "{i},{l}");
        }
        out
    }
}

struct Sampler {
    rng: ChaCha8Rng,
    jitter: Normal<f64>,
    band: Normal<f64>,
}

impl Sampler {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            jitter: Normal::new(0.0, JITTER).unwrap(),
            band: Normal::new(0.0, BAND_SPREAD).unwrap(),
        }
    }

    fn offset(&mut self) -> f64 {
        self.band.sample(&mut self.rng)
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }

    /// Samples `y = f(x)` at evenly spaced `x` in `[0, 1]` with jitter.
    fn polyline(&mut self, f: impl Fn(f64) -> f64) -> Vec<Point> {
        (0..VERTICES)
            .map(|v| {
                let x = v as f64 / (VERTICES - 1) as f64;
                Point::new(x, f(x) + self.jitter.sample(&mut self.rng))
            })
            .collect()
    }
}

fn build(chains: Vec<Vec<Point>>, labels: Vec<u32>, params: SynthParams, seed: u64) -> Result<LabeledLineSet> {
    let lineset = LineSet::from_vertices(chains, LineKind::Trajectory)?;
    Ok(LabeledLineSet { lineset, labels, params, seed })
}

/// A tight horizontal band over `dense` (measured from the entry side) that
/// then fans out linearly towards `y_end` at the far side.
fn band_then_fan(s: f64, dense: f64, offset: f64, y_end: f64) -> f64 {
    let fan = if s > dense { (s - dense) / (1.0 - dense) } else { 0.0 };
    0.5 + offset + fan * (y_end - 0.5)
}

/// Two mirrored half-patterns: one dense on the left fanning out to the right,
/// one dense on the right fanning out to the left. Together their dense parts
/// read as a single straight trend. Labels: 0 and 1 for the halves, 2 for
/// noise.
pub fn gen_illusory(n_pattern: usize, n_noise: usize, fanout: f64, seed: u64) -> Result<LabeledLineSet> {
    if !n_pattern.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("n_pattern must be even, got {n_pattern}")));
    }
    if !(0.0..=1.0).contains(&fanout) {
        return Err(Error::InvalidParameter(format!("fanout must be in [0, 1], got {fanout}")));
    }
    let params = SynthParams::Illusory { n_pattern, n_noise, fanout };
    let mut s = Sampler::new(seed);
    let mut chains = Vec::with_capacity(n_pattern + n_noise);
    let mut labels = Vec::with_capacity(n_pattern + n_noise);
    for half in 0..2u32 {
        for _ in 0..n_pattern / 2 {
            let offset = s.offset();
            let y_end = 0.5 + fanout * s.uniform(-FAN_HALF_HEIGHT, FAN_HALF_HEIGHT);
            let mirrored = half == 1;
            chains.push(s.polyline(|x| band_then_fan(if mirrored { 1.0 - x } else { x }, 0.5, offset, y_end)));
            labels.push(half);
        }
    }
    for _ in 0..n_noise {
        let (y0, y1) = (s.uniform(0.05, 0.95), s.uniform(0.05, 0.95));
        let wobble = s.uniform(-0.1, 0.1);
        chains.push(s.polyline(|x| y0 + (y1 - y0) * x + wobble * (std::f64::consts::PI * x).sin()));
        labels.push(2);
    }
    build(chains, labels, params, seed)
}

/// Two diagonal bundles forming an X (`Crossing`), or a V over an inverted V
/// meeting at the centre (`Touching`). Both modes cover the same region.
pub fn gen_continuation(n_per_trend: usize, mode: ContinuationMode, seed: u64) -> Result<LabeledLineSet> {
    if n_per_trend < 1 {
        return Err(Error::InvalidParameter("n_per_trend must be at least 1".into()));
    }
    let params = SynthParams::Continuation { n_per_trend, mode };
    let rising = |x: f64| 0.1 + 0.8 * x;
    let falling = |x: f64| 0.9 - 0.8 * x;
    let mut s = Sampler::new(seed);
    let mut chains = Vec::with_capacity(2 * n_per_trend);
    let mut labels = Vec::with_capacity(2 * n_per_trend);
    for trend in 0..2u32 {
        for _ in 0..n_per_trend {
            let o = s.offset() * 1.5;
            let chain = match (mode, trend) {
                (ContinuationMode::Crossing, 0) => s.polyline(|x| rising(x) + o),
                (ContinuationMode::Crossing, _) => s.polyline(|x| falling(x) + o),
                (ContinuationMode::Touching, 0) => s.polyline(|x| rising(x).max(falling(x)) + o),
                (ContinuationMode::Touching, _) => s.polyline(|x| rising(x).min(falling(x)) + o),
            };
            chains.push(chain);
            labels.push(trend);
        }
    }
    build(chains, labels, params, seed)
}

/// Two independent bundles, each a tight band along one side that fans out
/// towards the other. `separation` sets the horizontal length of the dense
/// bands: at 1 they meet in the middle.
pub fn gen_disconnected(n_per_trend: usize, separation: f64, seed: u64) -> Result<LabeledLineSet> {
    if n_per_trend < 1 {
        return Err(Error::InvalidParameter("n_per_trend must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&separation) {
        return Err(Error::InvalidParameter(format!("separation must be in [0, 1], got {separation}")));
    }
    let params = SynthParams::Disconnected { n_per_trend, separation };
    let dense = 0.05 + 0.45 * separation;
    let mut s = Sampler::new(seed);
    let mut chains = Vec::with_capacity(2 * n_per_trend);
    let mut labels = Vec::with_capacity(2 * n_per_trend);
    for trend in 0..2u32 {
        let level = if trend == 0 { 0.6 } else { 0.4 };
        for _ in 0..n_per_trend {
            let offset = s.offset() + (level - 0.5);
            let y_end = 0.5 + s.uniform(-FAN_HALF_HEIGHT, FAN_HALF_HEIGHT);
            let mirrored = trend == 1;
            chains.push(s.polyline(|x| band_then_fan(if mirrored { 1.0 - x } else { x }, dense, offset, y_end)));
            labels.push(trend);
        }
    }
    build(chains, labels, params, seed)
}

//! Edge-window features: fixed-length slices of the waveform around the first
//! rising and falling transitions inside the control, data and CRC fields.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::bussim::RawTrace;
use crate::can::{frame_layout, CanFrame, FieldMask, StuffedBitstream, DOMINANT, RECESSIVE};
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW_LEN: usize = 40;
pub const DEFAULT_PRE_SAMPLES: usize = 8;
pub const DEFAULT_EDGES_PER_FRAME: usize = 8;

/// Normalisation span of a single line.
pub const LINE_RANGE: (f64, f64) = (1.5, 3.5);
pub const DIFFERENTIAL_RANGE: (f64, f64) = (-0.2, 2.2);

/// Differential level separating dominant from recessive when reading bits.
pub const BIT_DECISION_VOLTS: f64 = 0.5;
/// CAN-H crossing level used by [`ThresholdLocator`].
pub const CAN_H_CROSSING_VOLTS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelMode {
    CanH,
    CanL,
    Differential,
}

impl ChannelMode {
    pub fn name(self) -> &'static str {
        match self {
            ChannelMode::CanH => "can_h",
            ChannelMode::CanL => "can_l",
            ChannelMode::Differential => "differential",
        }
    }

    pub fn range(self) -> (f64, f64) {
        match self {
            ChannelMode::Differential => DIFFERENTIAL_RANGE,
            _ => LINE_RANGE,
        }
    }

    /// The selected channel as volts.
    pub fn samples(self, trace: &RawTrace) -> Vec<f64> {
        match self {
            ChannelMode::CanH => trace.can_h.iter().map(|&v| v as f64).collect(),
            ChannelMode::CanL => trace.can_l.iter().map(|&v| v as f64).collect(),
            ChannelMode::Differential => trace
                .can_h
                .iter()
                .zip(&trace.can_l)
                .map(|(&h, &l)| h as f64 - l as f64)
                .collect(),
        }
    }
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "can_h" | "h" | "canh" => Ok(ChannelMode::CanH),
            "can_l" | "l" | "canl" => Ok(ChannelMode::CanL),
            "differential" | "diff" => Ok(ChannelMode::Differential),
            _ => Err(Error::Config(format!("unknown channel `{s}`"))),
        }
    }
}

/// Maps `x` to `clamp((x - lo) / (hi - lo), 0, 1)`.
pub fn normalize(values: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    if !(hi > lo) {
        return Err(Error::Config(format!("normalisation needs hi > lo, got [{lo}, {hi}]")));
    }
    let span = hi - lo;
    Ok(values.iter().map(|&x| ((x - lo) / span).clamp(0.0, 1.0)).collect())
}

/// A transition between two sampled bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitEdge {
    /// Index of the destination bit in the stuffed stream.
    pub bit: usize,
    /// Recessive to dominant.
    pub rising: bool,
}

/// Transitions whose source and destination bits both lie in eligible
/// fields, so the whole window stays inside sampled bit cells.
pub fn eligible_transitions(stream: &StuffedBitstream, mask: &FieldMask) -> Vec<BitEdge> {
    let mut out = Vec::new();
    let mut prev = RECESSIVE;
    for (i, &b) in stream.bits.iter().enumerate() {
        if b != prev && i > 0 && mask.is_eligible(i) && mask.is_eligible(i - 1) {
            out.push(BitEdge {
                bit: i,
                rising: b == DOMINANT,
            });
        }
        prev = b;
    }
    out
}

/// First `count` edges: half rising and half falling when both are
/// available, topped up from whichever kind remains, in temporal order.
pub fn select_edges(edges: &[BitEdge], count: usize) -> Result<Vec<BitEdge>> {
    if edges.len() < count {
        return Err(Error::TooFewEdges {
            found: edges.len(),
            needed: count,
        });
    }
    let want_rising = count.div_ceil(2);
    let want_falling = count / 2;
    let mut picked = vec![false; edges.len()];
    let take = |rising: bool, n: usize, picked: &mut Vec<bool>| {
        let mut left = n;
        for (i, e) in edges.iter().enumerate() {
            if left == 0 {
                break;
            }
            if e.rising == rising && !picked[i] {
                picked[i] = true;
                left -= 1;
            }
        }
        left
    };
    let short_r = take(true, want_rising, &mut picked);
    let short_f = take(false, want_falling, &mut picked);
    let mut short = short_r + short_f;
    for p in picked.iter_mut() {
        if short == 0 {
            break;
        }
        if !*p {
            *p = true;
            short -= 1;
        }
    }
    Ok(edges.iter().zip(&picked).filter(|(_, &p)| p).map(|(e, _)| *e).collect())
}

/// Finds the sample index (at the trace rate) where each selected window is anchored.
pub trait EdgeLocator: Send + Sync {
    fn name(&self) -> &'static str;

    /// Anchor instants in seconds from the start of the trace, one per edge.
    fn anchors(&self, trace: &RawTrace, edges: &[BitEdge]) -> Result<Vec<f64>>;
}

/// Nominal bit boundaries of the known bit grid.
#[derive(Debug, Clone, Copy, Default)]
pub struct BitGridLocator;

impl EdgeLocator for BitGridLocator {
    fn name(&self) -> &'static str {
        "bit-grid"
    }

    fn anchors(&self, trace: &RawTrace, edges: &[BitEdge]) -> Result<Vec<f64>> {
        Ok(edges.iter().map(|e| e.bit as f64 * trace.bit_time).collect())
    }
}

/// First crossing of CAN-H through a fixed level inside each edge's bit
/// cell; for traces whose timing reference is unknown.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdLocator {
    pub level: f64,
}

impl Default for ThresholdLocator {
    fn default() -> Self {
        Self {
            level: CAN_H_CROSSING_VOLTS,
        }
    }
}

impl EdgeLocator for ThresholdLocator {
    fn name(&self) -> &'static str {
        "threshold"
    }

    fn anchors(&self, trace: &RawTrace, edges: &[BitEdge]) -> Result<Vec<f64>> {
        let spb = trace.samples_per_bit();
        let dt = 1.0 / trace.sample_rate;
        edges
            .iter()
            .map(|e| {
                // Search from half a bit before the nominal boundary to half a bit after.
                let lo = ((e.bit as f64 - 0.5) * spb).max(1.0) as usize;
                let hi = (((e.bit as f64 + 0.5) * spb) as usize).min(trace.len());
                (lo..hi)
                    .find(|&i| {
                        let (a, b) = (trace.can_h[i - 1] as f64, trace.can_h[i] as f64);
                        if e.rising {
                            a < self.level && b >= self.level
                        } else {
                            a > self.level && b <= self.level
                        }
                    })
                    .map(|i| i as f64 * dt)
                    .ok_or(Error::TooFewEdges {
                        found: 0,
                        needed: edges.len(),
                    })
            })
            .collect()
    }
}

type LocatorCtor = fn() -> Box<dyn EdgeLocator>;

/// Edge locators by name.
pub struct LocatorRegistry {
    ctors: BTreeMap<&'static str, LocatorCtor>,
}

impl LocatorRegistry {
    pub fn create(&self, name: &str) -> Result<Box<dyn EdgeLocator>> {
        self.ctors
            .get(name)
            .map(|c| c())
            .ok_or_else(|| Error::Config(format!("unknown edge locator `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.ctors.keys().copied()
    }
}

impl Default for LocatorRegistry {
    fn default() -> Self {
        let mut ctors: BTreeMap<&'static str, LocatorCtor> = BTreeMap::new();
        ctors.insert("bit-grid", || Box::new(BitGridLocator));
        ctors.insert("threshold", || Box::new(ThresholdLocator::default()));
        Self { ctors }
    }
}

/// Fixed-length normalised feature of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub ecu_claim: u16,
    pub ground_truth: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub window_len: usize,
    pub pre_samples: usize,
    pub edges_per_frame: usize,
    pub channel: ChannelMode,
    /// Rate the windows are sampled at; traces at an integer multiple are decimated.
    pub sample_rate: f64,
}

impl FeatureConfig {
    pub fn new(channel: ChannelMode, sample_rate: f64) -> Self {
        Self {
            window_len: DEFAULT_WINDOW_LEN,
            pre_samples: DEFAULT_PRE_SAMPLES,
            edges_per_frame: DEFAULT_EDGES_PER_FRAME,
            channel,
            sample_rate,
        }
    }

    pub fn feature_len(&self) -> usize {
        self.window_len * self.edges_per_frame
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.edges_per_frame == 0 {
            return Err(Error::Config("window length and edge count must be positive".into()));
        }
        if self.pre_samples >= self.window_len {
            return Err(Error::Config("pre-samples must be fewer than the window length".into()));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::Config("feature sample rate must be positive".into()));
        }
        Ok(())
    }

    /// Integer decimation factor from `trace_rate` to the feature rate.
    pub fn decimation(&self, trace_rate: f64) -> Result<usize> {
        let ratio = trace_rate / self.sample_rate;
        let m = ratio.round();
        if m < 1.0 || (ratio - m).abs() > 1e-9 * ratio {
            return Err(Error::Config(format!(
                "trace rate {trace_rate} Hz is not an integer multiple of the feature rate {} Hz",
                self.sample_rate
            )));
        }
        Ok(m as usize)
    }
}

/// Reads the bit sequence back from the differential at bit centres.
pub fn recover_bitstream(trace: &RawTrace) -> Result<StuffedBitstream> {
    let spb = trace.samples_per_bit();
    if spb < 2.0 {
        return Err(Error::TraceFormat("fewer than two samples per bit".into()));
    }
    let n_bits = (trace.len() as f64 / spb).floor() as usize;
    let bits = (0..n_bits)
        .map(|k| {
            let i = ((k as f64 + 0.5) * spb) as usize;
            (trace.can_h[i] - trace.can_l[i]) as f64 <= BIT_DECISION_VOLTS
        })
        .collect();
    Ok(StuffedBitstream::from_bits(bits))
}

/// Turns traces into feature vectors with a chosen edge locator.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    locator: Box<dyn EdgeLocator>,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        Self::with_locator(cfg, Box::new(BitGridLocator))
    }

    pub fn with_locator(cfg: FeatureConfig, locator: Box<dyn EdgeLocator>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, locator })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn locator_name(&self) -> &'static str {
        self.locator.name()
    }

    /// Features from a trace whose bit content is known.
    pub fn extract_with_layout(&self, trace: &RawTrace, stream: &StuffedBitstream, mask: &FieldMask) -> Result<FeatureVector> {
        if trace.can_h.len() != trace.can_l.len() {
            return Err(Error::TraceFormat("CAN-H and CAN-L lengths differ".into()));
        }
        let m = self.cfg.decimation(trace.sample_rate)?;
        let edges = select_edges(&eligible_transitions(stream, mask), self.cfg.edges_per_frame)?;
        let anchors = self.locator.anchors(trace, &edges)?;
        let signal = self.cfg.channel.samples(trace);
        let mut raw = Vec::with_capacity(self.cfg.feature_len());
        for t in anchors {
            // Anchor on the feature-rate grid, then map back to trace samples.
            let anchor = (t * self.cfg.sample_rate).round() as isize;
            let start = anchor - self.cfg.pre_samples as isize;
            for j in 0..self.cfg.window_len as isize {
                let i = (start + j) * m as isize;
                if i < 0 || i as usize >= signal.len() {
                    return Err(Error::TraceFormat("edge window extends past the trace".into()));
                }
                raw.push(signal[i as usize]);
            }
        }
        let (lo, hi) = self.cfg.channel.range();
        Ok(FeatureVector {
            values: normalize(&raw, lo, hi)?,
            ecu_claim: trace.tx_id,
            ground_truth: Some(trace.source_label.clone()),
        })
    }

    /// Features from a bare trace: the frame is decoded from the waveform first.
    pub fn extract(&self, trace: &RawTrace) -> Result<FeatureVector> {
        let (stream, _, mask) = decode_recovered(&recover_bitstream(trace)?)?;
        self.extract_with_layout(trace, &stream, &mask)
    }
}

/// Decodes a recovered stream, shedding idle bits recorded after the end of
/// frame. Returns the trimmed stream, the frame and its field mask.
pub fn decode_recovered(stream: &StuffedBitstream) -> Result<(StuffedBitstream, CanFrame, FieldMask)> {
    let mut bits = stream.bits.clone();
    loop {
        let candidate = StuffedBitstream::from_bits(bits.clone());
        match frame_layout(&candidate) {
            Ok((frame, mask)) => return Ok((candidate, frame, mask)),
            Err(e) => {
                if bits.last() != Some(&RECESSIVE) {
                    return Err(e.into());
                }
                bits.pop();
            }
        }
    }
}

//! Simulated capture campaigns: reference networks rendered frame by frame
//! and reduced to features without holding every waveform in memory.

use crate::bussim::{
    build_network, round_robin_schedule, synth_frame_waveform, trace_rng, AttackerProfile,
    NetworkConfig, RawTrace, SynthConfig, TapPoint, DEFAULT_NOISE_SIGMA,
};
use crate::can::{encode_frame, FieldMask, StuffedBitstream};
use crate::error::Result;
use crate::features::{FeatureExtractor, FeatureVector};

/// One capture run on a reference network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Campaign {
    pub network: NetworkConfig,
    pub attacker: AttackerProfile,
    pub frames: usize,
    /// Whether the intruder transmits (spoofing legitimate identifiers).
    pub attacker_active: bool,
    pub sample_rate: f64,
    pub noise_sigma: f64,
    /// Minimum eligible rising and falling transitions per frame.
    pub min_edges: usize,
    pub seed: u64,
}

impl Campaign {
    pub fn new(network: NetworkConfig, attacker: AttackerProfile, frames: usize, sample_rate: f64, seed: u64) -> Self {
        Self {
            network,
            attacker,
            frames,
            attacker_active: false,
            sample_rate,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            min_edges: 4,
            seed,
        }
    }

    pub fn active(mut self, active: bool) -> Self {
        self.attacker_active = active;
        self
    }

    /// Renders every frame in schedule order and hands it to `visit`.
    pub fn for_each<F>(&self, mut visit: F) -> Result<()>
    where
        F: FnMut(usize, TapPoint, RawTrace, &StuffedBitstream, &FieldMask) -> Result<()>,
    {
        let bus = build_network(self.network, &self.attacker.params(), self.attacker.label())?;
        let schedule = round_robin_schedule(&bus, self.frames, self.attacker_active, self.min_edges, self.seed)?;
        let cfg = SynthConfig {
            noise_sigma: self.noise_sigma,
            ..SynthConfig::new(self.sample_rate)
        };
        // Noise streams are offset from the schedule stream of the same seed.
        let noise_seed = self.seed ^ 0x6E6F_6973_6500_0000;
        for (i, s) in schedule.iter().enumerate() {
            let (stream, mask) = encode_frame(&s.frame)?;
            let mut trace = synth_frame_waveform(&bus, s.tx, &stream, s.frame.id(), &cfg, &mut trace_rng(noise_seed, i as u64))?;
            trace.network = Some(self.network);
            visit(i, s.tx, trace, &stream, &mask)?;
        }
        Ok(())
    }

    pub fn traces(&self) -> Result<Vec<RawTrace>> {
        let mut out = Vec::with_capacity(self.frames);
        self.for_each(|_, _, t, _, _| {
            out.push(t);
            Ok(())
        })?;
        Ok(out)
    }

    /// Features of every frame, in schedule order.
    pub fn features(&self, extractor: &FeatureExtractor) -> Result<Vec<SimFeature>> {
        let mut out = Vec::with_capacity(self.frames);
        self.for_each(|_, tx, trace, stream, mask| {
            out.push(SimFeature {
                feature: extractor.extract_with_layout(&trace, stream, mask)?,
                tx,
                attacker: trace.attacker,
                network: self.network,
            });
            Ok(())
        })?;
        Ok(out)
    }
}

/// A feature vector with its simulation ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimFeature {
    pub feature: FeatureVector,
    pub tx: TapPoint,
    pub attacker: bool,
    pub network: NetworkConfig,
}

impl SimFeature {
    pub fn source(&self) -> &str {
        self.feature.ground_truth.as_deref().unwrap_or("")
    }
}

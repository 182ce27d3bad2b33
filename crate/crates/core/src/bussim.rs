//! Parametric CAN physical-layer surrogate.
//!
//! Each transition follows a first-order response whose time constant grows
//! with the total tap capacitance on the bus. Every other occupied tap adds a
//! damped ring delayed by the transmitter → tap → monitor path length.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use rand_distr::{Distribution, Normal};

use crate::can::{encode_frame, CanFrame, FieldMask, StuffedBitstream, DOMINANT, RECESSIVE};
use crate::error::{Error, Result};
use crate::features::eligible_transitions;

pub const BIT_RATE: f64 = 500e3;
pub const BIT_TIME: f64 = 1.0 / BIT_RATE;
pub const DETECTION_SAMPLE_RATE: f64 = 125e6;
pub const FINGERPRINT_SAMPLE_RATE: f64 = 500e6;
pub const DEFAULT_NOISE_SIGMA: f64 = 5e-3;
pub const PROPAGATION_VELOCITY: f64 = 2e8;
pub const TERMINATION_OHMS: f64 = 120.0;
/// Time-constant gain per nanofarad of total tap capacitance.
pub const KAPPA_PER_NF: f64 = 0.5;
pub const TAP_SPACING_M: f64 = 0.5;
pub const MONITOR_POSITION_M: f64 = 2.25;

/// Responses are evaluated this many time constants past their start.
const SETTLE_SPANS: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcuElectricalParams {
    pub v_h_dom: f64,
    pub v_l_dom: f64,
    pub v_rec: f64,
    pub tau_drive: f64,
    pub z_out: f64,
    pub c_tap: f64,
    pub ring_amp: f64,
    pub ring_freq: f64,
    pub ring_damp: f64,
}

impl EcuElectricalParams {
    /// Shared profile of the legitimate device family.
    pub const NOMINAL: Self = Self {
        v_h_dom: 3.5,
        v_l_dom: 1.5,
        v_rec: 2.5,
        tau_drive: 12e-9,
        z_out: 10.0,
        c_tap: 0.2e-9,
        ring_amp: 0.12,
        ring_freq: 90e6,
        ring_damp: 12e-9,
    };

    /// Fraction of the open-circuit swing that survives the driver's output
    /// impedance against the two parallel terminations.
    pub fn load_factor(&self) -> f64 {
        let r_load = TERMINATION_OHMS / 2.0;
        r_load / (r_load + self.z_out)
    }

    /// Steady dominant (CAN-H, CAN-L) levels.
    pub fn dominant_levels(&self) -> (f64, f64) {
        let g = self.load_factor();
        (
            self.v_rec + (self.v_h_dom - self.v_rec) * g,
            self.v_rec + (self.v_l_dom - self.v_rec) * g,
        )
    }

    pub fn dominant_differential(&self) -> f64 {
        let (h, l) = self.dominant_levels();
        h - l
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.v_h_dom,
            self.v_l_dom,
            self.v_rec,
            self.tau_drive,
            self.z_out,
            self.c_tap,
            self.ring_amp,
            self.ring_freq,
            self.ring_damp,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite value".into()));
        }
        if !(self.v_h_dom > self.v_rec && self.v_rec > self.v_l_dom) {
            return Err(Error::InvalidParams("rails must satisfy v_h_dom > v_rec > v_l_dom".into()));
        }
        if self.tau_drive <= 0.0 || self.ring_freq <= 0.0 || self.ring_damp <= 0.0 {
            return Err(Error::InvalidParams("time constants and frequencies must be positive".into()));
        }
        if self.z_out < 0.0 || self.c_tap < 0.0 || self.ring_amp < 0.0 {
            return Err(Error::InvalidParams("impedance, capacitance and ring amplitude must be >= 0".into()));
        }
        let diff = self.dominant_differential();
        if !(0.9..=2.0).contains(&diff) {
            return Err(Error::InvalidParams(format!(
                "dominant differential {diff:.3} V outside 0.9-2.0 V"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TapPoint {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
    I,
    J,
}

impl TapPoint {
    pub const ALL: [TapPoint; 10] = [
        TapPoint::A,
        TapPoint::B,
        TapPoint::C,
        TapPoint::D,
        TapPoint::E,
        TapPoint::F,
        TapPoint::G,
        TapPoint::H,
        TapPoint::I,
        TapPoint::J,
    ];

    /// Open taps where a device can be inserted.
    pub const INSERTION_POINTS: [TapPoint; 5] = [TapPoint::B, TapPoint::D, TapPoint::F, TapPoint::H, TapPoint::J];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        (b'A' + self as u8) as char
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for TapPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for TapPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) if c.is_ascii_alphabetic() => {
                let i = (c.to_ascii_uppercase() as u8).wrapping_sub(b'A') as usize;
                Self::from_index(i).ok_or_else(|| Error::Config(format!("unknown tap point `{s}`")))
            }
            _ => Err(Error::Config(format!("unknown tap point `{s}`"))),
        }
    }
}

impl Serialize for TapPoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TapPoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A device connected to a tap.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupant {
    pub label: String,
    pub params: EcuElectricalParams,
    pub attacker: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tap {
    pub point: TapPoint,
    pub position: f64,
    pub occupant: Option<Occupant>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusTopology {
    taps: Vec<Tap>,
    pub monitor_position: f64,
    pub termination: f64,
    pub propagation_velocity: f64,
    pub kappa_per_nf: f64,
}

impl BusTopology {
    /// Ten empty taps A..J spaced evenly from the bus origin.
    pub fn empty() -> Self {
        Self {
            taps: TapPoint::ALL
                .iter()
                .map(|&point| Tap {
                    point,
                    position: point.index() as f64 * TAP_SPACING_M,
                    occupant: None,
                })
                .collect(),
            monitor_position: MONITOR_POSITION_M,
            termination: TERMINATION_OHMS,
            propagation_velocity: PROPAGATION_VELOCITY,
            kappa_per_nf: KAPPA_PER_NF,
        }
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn tap(&self, point: TapPoint) -> &Tap {
        &self.taps[point.index()]
    }

    pub fn occupant(&self, point: TapPoint) -> Option<&Occupant> {
        self.tap(point).occupant.as_ref()
    }

    pub fn connect(&mut self, point: TapPoint, occupant: Occupant) -> Result<()> {
        occupant.params.validate()?;
        self.taps[point.index()].occupant = Some(occupant);
        Ok(())
    }

    pub fn disconnect(&mut self, point: TapPoint) -> Option<Occupant> {
        self.taps[point.index()].occupant.take()
    }

    pub fn occupied(&self) -> impl Iterator<Item = (&Tap, &Occupant)> {
        self.taps.iter().filter_map(|t| t.occupant.as_ref().map(|o| (t, o)))
    }

    /// Sum of the tap capacitances of every connected device, in nF.
    pub fn total_capacitance_nf(&self) -> f64 {
        self.occupied().map(|(_, o)| o.params.c_tap * 1e9).sum()
    }

    /// Effective edge time constant for a transmitter on this bus.
    pub fn effective_tau(&self, params: &EcuElectricalParams) -> f64 {
        params.tau_drive * (1.0 + self.kappa_per_nf * self.total_capacitance_nf())
    }

    /// Delay of the direct path from `tx` to the monitor.
    pub fn direct_delay(&self, tx: TapPoint) -> f64 {
        (self.tap(tx).position - self.monitor_position).abs() / self.propagation_velocity
    }

    /// Delay of the path `tx` → `via` → monitor.
    pub fn reflection_delay(&self, tx: TapPoint, via: TapPoint) -> f64 {
        let (xt, xj) = (self.tap(tx).position, self.tap(via).position);
        ((xj - xt).abs() + (xj - self.monitor_position).abs()) / self.propagation_velocity
    }

    /// Occupied positions strictly increase and there are exactly ten taps.
    pub fn validate(&self) -> Result<()> {
        if self.taps.len() != TapPoint::ALL.len() {
            return Err(Error::Config("a bus has exactly ten taps".into()));
        }
        if self.taps.windows(2).any(|w| w[1].position <= w[0].position) {
            return Err(Error::Config("tap positions must strictly increase".into()));
        }
        if self.propagation_velocity <= 0.0 || self.termination <= 0.0 {
            return Err(Error::Config("velocity and termination must be positive".into()));
        }
        Ok(())
    }
}

/// A legitimate ECU of the reference vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct EcuProfile {
    pub label: &'static str,
    pub point: TapPoint,
    pub params: EcuElectricalParams,
    pub ids: &'static [u16],
}

/// Per-device deviation from the nominal profile.
struct Jitter {
    tau: f64,
    v_h: f64,
    v_l: f64,
    z_out: f64,
    c_tap: f64,
    ring_freq: f64,
}

const fn jittered(j: Jitter) -> EcuElectricalParams {
    let n = EcuElectricalParams::NOMINAL;
    EcuElectricalParams {
        v_h_dom: n.v_h_dom * j.v_h,
        v_l_dom: n.v_l_dom * j.v_l,
        v_rec: n.v_rec,
        tau_drive: n.tau_drive * j.tau,
        z_out: n.z_out * j.z_out,
        c_tap: n.c_tap * j.c_tap,
        ring_amp: n.ring_amp,
        ring_freq: j.ring_freq,
        ring_damp: n.ring_damp,
    }
}

/// The five legitimate ECUs at A, C, E, G and I.
pub fn legitimate_ecus() -> Vec<EcuProfile> {
    vec![
        EcuProfile {
            label: "L1",
            point: TapPoint::A,
            params: jittered(Jitter { tau: 1.000, v_h: 1.000, v_l: 1.000, z_out: 1.00, c_tap: 1.00, ring_freq: 88e6 }),
            ids: &[0x0A0, 0x0A1, 0x0A2],
        },
        EcuProfile {
            label: "L2",
            point: TapPoint::C,
            params: jittered(Jitter { tau: 1.025, v_h: 1.006, v_l: 0.993, z_out: 1.03, c_tap: 1.05, ring_freq: 93e6 }),
            ids: &[0x1B0, 0x1B1, 0x1B2],
        },
        EcuProfile {
            label: "L3",
            point: TapPoint::E,
            params: jittered(Jitter { tau: 0.972, v_h: 0.994, v_l: 1.008, z_out: 0.98, c_tap: 0.96, ring_freq: 84e6 }),
            ids: &[0x2C0, 0x2C1, 0x2C2],
        },
        EcuProfile {
            label: "L4",
            point: TapPoint::G,
            params: jittered(Jitter { tau: 1.014, v_h: 1.004, v_l: 1.010, z_out: 1.01, c_tap: 1.02, ring_freq: 97e6 }),
            ids: &[0x3D0, 0x3D1, 0x3D2],
        },
        EcuProfile {
            label: "L5",
            point: TapPoint::I,
            params: jittered(Jitter { tau: 0.988, v_h: 0.996, v_l: 0.990, z_out: 0.99, c_tap: 0.98, ring_freq: 80e6 }),
            ids: &[0x4E0, 0x4E1, 0x4E2],
        },
    ]
}

/// Foreign transceivers used as intruders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackerProfile {
    A1,
    A2,
}

impl AttackerProfile {
    pub fn label(self) -> &'static str {
        match self {
            AttackerProfile::A1 => "A1",
            AttackerProfile::A2 => "A2",
        }
    }

    pub fn params(self) -> EcuElectricalParams {
        match self {
            AttackerProfile::A1 => EcuElectricalParams {
                v_h_dom: 3.45,
                v_l_dom: 1.56,
                v_rec: 2.5,
                tau_drive: 15e-9,
                z_out: 12.0,
                c_tap: 0.70e-9,
                ring_amp: 0.20,
                ring_freq: 70e6,
                ring_damp: 15e-9,
            },
            AttackerProfile::A2 => EcuElectricalParams {
                v_h_dom: 3.42,
                v_l_dom: 1.60,
                v_rec: 2.5,
                tau_drive: 16.5e-9,
                z_out: 13.0,
                c_tap: 0.75e-9,
                ring_amp: 0.24,
                ring_freq: 62e6,
                ring_damp: 16e-9,
            },
        }
    }
}

impl fmt::Display for AttackerProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AttackerProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A1" => Ok(AttackerProfile::A1),
            "A2" => Ok(AttackerProfile::A2),
            _ => Err(Error::Config(format!("unknown attacker `{s}` (expected A1 or A2)"))),
        }
    }
}

/// The nine reference networks: clean, three replacements, five insertions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NetworkConfig(u8);

impl NetworkConfig {
    pub const CLEAN: NetworkConfig = NetworkConfig(0);

    pub fn new(index: u8) -> Result<Self> {
        if index > 8 {
            return Err(Error::Config(format!("network Nw{index} does not exist (Nw0-Nw8)")));
        }
        Ok(Self(index))
    }

    pub fn all() -> impl Iterator<Item = NetworkConfig> {
        (0..=8).map(NetworkConfig)
    }

    pub fn index(self) -> u8 {
        self.0
    }

    /// Where the intruder sits and whether it replaces a legitimate ECU.
    pub fn intrusion(self) -> Option<(TapPoint, bool)> {
        match self.0 {
            0 => None,
            1 => Some((TapPoint::A, true)),
            2 => Some((TapPoint::E, true)),
            3 => Some((TapPoint::I, true)),
            n => Some((TapPoint::INSERTION_POINTS[(n - 4) as usize], false)),
        }
    }

    pub fn is_insertion(self) -> bool {
        self.0 >= 4
    }

    pub fn is_replacement(self) -> bool {
        (1..=3).contains(&self.0)
    }
}

impl fmt::Display for NetworkConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nw{}", self.0)
    }
}

impl FromStr for NetworkConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let digits = t
            .strip_prefix("Nw")
            .or_else(|| t.strip_prefix("nw"))
            .or_else(|| t.strip_prefix("NW"))
            .unwrap_or(t);
        let n: u8 = digits
            .parse()
            .map_err(|_| Error::Config(format!("unknown network `{s}` (expected Nw0-Nw8)")))?;
        Self::new(n)
    }
}

/// Builds one of the reference networks with `attacker` as the intruder.
pub fn build_network(config: NetworkConfig, attacker: &EcuElectricalParams, attacker_label: &str) -> Result<BusTopology> {
    let mut bus = BusTopology::empty();
    for ecu in legitimate_ecus() {
        bus.connect(
            ecu.point,
            Occupant {
                label: ecu.label.to_string(),
                params: ecu.params,
                attacker: false,
            },
        )?;
    }
    if let Some((point, _)) = config.intrusion() {
        bus.disconnect(point);
        bus.connect(
            point,
            Occupant {
                label: attacker_label.to_string(),
                params: *attacker,
                attacker: true,
            },
        )?;
    }
    Ok(bus)
}

/// Sampled CAN-H / CAN-L voltages of one frame, starting at the SOF edge.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrace {
    pub can_h: Vec<f32>,
    pub can_l: Vec<f32>,
    pub sample_rate: f64,
    pub bit_time: f64,
    pub tx_id: u16,
    pub source_label: String,
    pub attacker: bool,
    pub network: Option<NetworkConfig>,
}

impl RawTrace {
    pub fn len(&self) -> usize {
        self.can_h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.can_h.is_empty()
    }

    pub fn samples_per_bit(&self) -> f64 {
        self.sample_rate * self.bit_time
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub sample_rate: f64,
    pub bit_time: f64,
    pub noise_sigma: f64,
}

impl SynthConfig {
    pub fn new(sample_rate: f64) -> Self {
        Self {
            sample_rate,
            bit_time: BIT_TIME,
            noise_sigma: DEFAULT_NOISE_SIGMA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.bit_time > 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::Config("sample rate and bit time must be positive, noise >= 0".into()));
        }
        if self.sample_rate * self.bit_time < 2.0 {
            return Err(Error::Config("sample rate must give at least two samples per bit".into()));
        }
        Ok(())
    }
}

/// Seed of the `index`-th trace of a run.
pub fn trace_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Noise-free CAN-H and CAN-L at the monitor for `tx` sending `bits`.
fn render(topology: &BusTopology, tx: TapPoint, params: &EcuElectricalParams, bits: &[bool], cfg: &SynthConfig) -> (Vec<f64>, Vec<f64>) {
    let len = (bits.len() as f64 * cfg.bit_time * cfg.sample_rate).ceil() as usize;
    let dt = 1.0 / cfg.sample_rate;
    let (dom_h, dom_l) = params.dominant_levels();
    let rec = params.v_rec;
    let tau = topology.effective_tau(params);
    let direct = topology.direct_delay(tx);

    let mut h = vec![rec; len];
    let mut l = vec![rec; len];
    let mut level = RECESSIVE;
    // Transition instants (at the transmitter) and direction: +1 toward dominant.
    let mut edges = Vec::new();
    for (k, &b) in bits.iter().enumerate() {
        if b != level {
            edges.push((k as f64 * cfg.bit_time, if b == DOMINANT { 1.0 } else { -1.0 }));
            level = b;
        }
    }

    // Piecewise first-order response; each edge starts from wherever the
    // previous one left the line.
    let mut cur = (rec, rec);
    let sample_at = |t: f64| (t / dt).ceil().max(0.0) as usize;
    for (e, &(t0, dir)) in edges.iter().enumerate() {
        let arrive = t0 + direct;
        let start = sample_at(arrive).min(len);
        let end = edges.get(e + 1).map_or(len, |&(t1, _)| sample_at(t1 + direct).min(len));
        let target = if dir > 0.0 { (dom_h, dom_l) } else { (rec, rec) };
        // Level reached by the previous response at this edge's arrival.
        if e > 0 {
            let (pt0, pdir) = edges[e - 1];
            let ptarget = if pdir > 0.0 { (dom_h, dom_l) } else { (rec, rec) };
            let el = arrive - (pt0 + direct);
            let f = (-el / tau).exp();
            cur = (ptarget.0 + (cur.0 - ptarget.0) * f, ptarget.1 + (cur.1 - ptarget.1) * f);
        }
        let settle_end = end.min(start + (SETTLE_SPANS * tau / dt).ceil() as usize);
        for i in start..settle_end {
            let f = (-(i as f64 * dt - arrive) / tau).exp();
            h[i] = target.0 + (cur.0 - target.0) * f;
            l[i] = target.1 + (cur.1 - target.1) * f;
        }
        for i in settle_end..end {
            h[i] = target.0;
            l[i] = target.1;
        }
    }

    // Reflections from every other connected device: the stub sets the
    // amplitude, the transmitter's edge sets frequency and decay.
    let horizon = (SETTLE_SPANS * params.ring_damp / dt).ceil() as usize;
    let w = 2.0 * std::f64::consts::PI * params.ring_freq;
    for (tap, occ) in topology.occupied() {
        if tap.point == tx {
            continue;
        }
        let amp = occ.params.ring_amp;
        let delay = topology.reflection_delay(tx, tap.point);
        for &(t0, dir) in &edges {
            let arrive = t0 + delay;
            let start = sample_at(arrive);
            for i in start..(start + horizon).min(len) {
                let t = i as f64 * dt - arrive;
                let r = dir * amp * (-t / params.ring_damp).exp() * (w * t).sin();
                h[i] += r;
                l[i] -= r;
            }
        }
    }
    (h, l)
}

/// Synthesizes the waveform of `stream` sent by the device at `tx`, as
/// seen at the monitor, with Gaussian measurement noise.
pub fn synth_frame_waveform(
    topology: &BusTopology,
    tx: TapPoint,
    stream: &StuffedBitstream,
    tx_id: u16,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RawTrace> {
    cfg.validate()?;
    let occ = topology.occupant(tx).ok_or(Error::EmptyTap(tx))?;
    let (h, l) = render(topology, tx, &occ.params, &stream.bits, cfg);
    let (can_h, can_l) = if cfg.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        let can_h = h.iter().map(|v| (v + noise.sample(rng)) as f32).collect();
        let can_l = l.iter().map(|v| (v + noise.sample(rng)) as f32).collect();
        (can_h, can_l)
    } else {
        (h.iter().map(|&v| v as f32).collect(), l.iter().map(|&v| v as f32).collect())
    };
    Ok(RawTrace {
        can_h,
        can_l,
        sample_rate: cfg.sample_rate,
        bit_time: cfg.bit_time,
        tx_id,
        source_label: occ.label.clone(),
        attacker: occ.attacker,
        network: None,
    })
}

/// One frame of a transmission schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledFrame {
    pub tx: TapPoint,
    pub frame: CanFrame,
}

/// Renders every scheduled frame; trace `i` uses noise stream `i` of `seed`.
pub fn generate_dataset(topology: &BusTopology, schedule: &[ScheduledFrame], cfg: &SynthConfig, seed: u64) -> Result<Vec<RawTrace>> {
    schedule
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (stream, _) = encode_frame(&s.frame)?;
            synth_frame_waveform(topology, s.tx, &stream, s.frame.id(), cfg, &mut trace_rng(seed, i as u64))
        })
        .collect()
}

/// Rising and falling transitions usable as feature edges.
pub fn eligible_edge_counts(stream: &StuffedBitstream, mask: &FieldMask) -> (usize, usize) {
    let edges = eligible_transitions(stream, mask);
    let rising = edges.iter().filter(|e| e.rising).count();
    (rising, edges.len() - rising)
}

/// Payload lengths used for synthetic traffic.
const SCHEDULE_DLC: std::ops::RangeInclusive<u8> = 2..=8;

/// Random data frame from `id` with at least `min_edges` eligible rising
/// and falling transitions each.
pub fn random_frame(id: u16, min_edges: usize, rng: &mut ChaCha8Rng) -> Result<CanFrame> {
    loop {
        let dlc = rng.random_range(SCHEDULE_DLC);
        let data: Vec<u8> = (0..dlc).map(|_| rng.random()).collect();
        let frame = CanFrame::new(id, &data)?;
        let (stream, mask) = encode_frame(&frame)?;
        let (r, f) = eligible_edge_counts(&stream, &mask);
        if r >= min_edges && f >= min_edges {
            return Ok(frame);
        }
    }
}

/// Round-robin traffic from every legitimate device on the bus, plus the
/// intruder when `attacker_active`. Legitimate devices use their own
/// identifiers; the intruder spoofs a random legitimate one.
pub fn round_robin_schedule(topology: &BusTopology, frames: usize, attacker_active: bool, min_edges: usize, seed: u64) -> Result<Vec<ScheduledFrame>> {
    let profiles = legitimate_ecus();
    let mut senders: Vec<(TapPoint, Option<&'static [u16]>)> = Vec::new();
    for (tap, occ) in topology.occupied() {
        if occ.attacker {
            if attacker_active {
                senders.push((tap.point, None));
            }
        } else if let Some(p) = profiles.iter().find(|p| p.label == occ.label) {
            senders.push((tap.point, Some(p.ids)));
        }
    }
    if senders.is_empty() {
        return if frames == 0 { Ok(Vec::new()) } else { Err(Error::Config("no transmitting devices on the bus".into())) };
    }
    let spoofable: Vec<u16> = topology
        .occupied()
        .filter_map(|(_, o)| profiles.iter().find(|p| p.label == o.label))
        .flat_map(|p| p.ids.iter().copied())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..frames)
        .map(|i| {
            let (tx, ids) = senders[i % senders.len()];
            let pool = ids.unwrap_or(&spoofable);
            if pool.is_empty() {
                return Err(Error::Config("intruder has no identifier to spoof".into()));
            }
            let id = pool[rng.random_range(0..pool.len())];
            Ok(ScheduledFrame {
                tx,
                frame: random_frame(id, min_edges, &mut rng)?,
            })
        })
        .collect()
}

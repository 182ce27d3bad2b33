//! Start-up detection, the monitoring window that separates insertion from
//! replacement, localisation, and continuous authentication.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::auth::{AuthBundle, AuthVerdict, Identification};
use crate::bussim::{RawTrace, TapPoint};
use crate::can::{FieldMask, StuffedBitstream};
use crate::detector::{DetectorModel, KOfN};
use crate::error::{Error, Result};
use crate::features::{decode_recovered, recover_bitstream, FeatureConfig, FeatureExtractor};
use crate::localizer::{locate_insertion_point, LocalizationInput, LocalizerModel};
use crate::roster::EcuRoster;

/// Default monitoring window, seconds of bus time.
pub const DEFAULT_TP: f64 = 2.0;
/// Spacing assumed between recorded frames that carry no timestamp.
pub const DEFAULT_FRAME_INTERVAL: f64 = 0.01;
/// Rng stream used for localisation tie-breaks.
const TIE_BREAK_STREAM: u64 = 2;

/// Decides whether the bus topology differs from the clean one.
pub trait IntrusionDetector {
    fn is_bus_compromised(&self, sig: &[f64]) -> Result<bool>;
}

/// Scores a frame against the ECU owning its identifier.
pub trait Authenticator {
    fn roster(&self) -> &EcuRoster;
    fn authenticate(&self, sig: &[f64], claimed_id: u16, bus_compromised: bool) -> Result<AuthVerdict>;
}

/// Maps one stored signal per ECU to an insertion point.
pub trait InsertionLocator {
    fn locate(&self, input: &LocalizationInput, rng: &mut ChaCha8Rng) -> Result<TapPoint>;
}

impl IntrusionDetector for DetectorModel {
    fn is_bus_compromised(&self, sig: &[f64]) -> Result<bool> {
        DetectorModel::is_bus_compromised(self, sig)
    }
}

impl Authenticator for AuthBundle {
    fn roster(&self) -> &EcuRoster {
        AuthBundle::roster(self)
    }

    fn authenticate(&self, sig: &[f64], claimed_id: u16, bus_compromised: bool) -> Result<AuthVerdict> {
        AuthBundle::authenticate(self, sig, claimed_id, bus_compromised)
    }
}

impl InsertionLocator for LocalizerModel {
    fn locate(&self, input: &LocalizationInput, rng: &mut ChaCha8Rng) -> Result<TapPoint> {
        locate_insertion_point(input, self, rng)
    }
}

/// One received frame reduced to the three feature views the models use.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitoredFrame {
    /// Seconds of bus time.
    pub timestamp: f64,
    pub can_id: u16,
    pub remote: bool,
    pub detection: Vec<f64>,
    pub auth: Vec<f64>,
    pub location: Vec<f64>,
}

/// Extracts all feature views of a trace from a single decode.
pub struct FramePipeline {
    pub detection: FeatureExtractor,
    pub auth: FeatureExtractor,
    pub location: FeatureExtractor,
}

impl FramePipeline {
    pub fn new(detection: FeatureConfig, auth: FeatureConfig, location: FeatureConfig) -> Result<Self> {
        Ok(Self {
            detection: FeatureExtractor::new(detection)?,
            auth: FeatureExtractor::new(auth)?,
            location: FeatureExtractor::new(location)?,
        })
    }

    pub fn frame_with_layout(
        &self,
        trace: &RawTrace,
        stream: &StuffedBitstream,
        mask: &FieldMask,
        remote: bool,
        timestamp: f64,
    ) -> Result<MonitoredFrame> {
        Ok(MonitoredFrame {
            timestamp,
            can_id: trace.tx_id,
            remote,
            detection: self.detection.extract_with_layout(trace, stream, mask)?.values,
            auth: self.auth.extract_with_layout(trace, stream, mask)?.values,
            location: self.location.extract_with_layout(trace, stream, mask)?.values,
        })
    }

    /// Decodes the frame from the waveform, then extracts every view.
    pub fn frame(&self, trace: &RawTrace, timestamp: f64) -> Result<MonitoredFrame> {
        let (stream, frame, mask) = decode_recovered(&recover_bitstream(trace)?)?;
        if frame.id() != trace.tx_id {
            return Err(Error::TraceFormat(format!(
                "decoded identifier {:#05x} differs from the recorded {:#05x}",
                frame.id(),
                trace.tx_id
            )));
        }
        self.frame_with_layout(trace, &stream, &mask, frame.is_remote(), timestamp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AlertKind {
    TopologyChange,
    Spoof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttackType {
    Insertion,
    Replacement,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Alert {
    pub kind: AlertKind,
    /// Index of the frame that produced the alert.
    pub frame: usize,
    pub timestamp: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<TapPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack_type: Option<AttackType>,
    /// ECUs never authenticated during the window (replacement only).
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<String>,
    /// A silent ECU cannot be told apart from a replaced one.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub no_transmission: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub claimed_id: Option<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub claimed_origin: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_origin: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub low_confidence: bool,
}

impl Alert {
    fn topology(frame: usize, timestamp: f64, attack: AttackType, location: TapPoint, missing: Vec<String>) -> Self {
        Self {
            kind: AlertKind::TopologyChange,
            frame,
            timestamp,
            location: Some(location),
            attack_type: Some(attack),
            no_transmission: attack == AttackType::Replacement,
            missing,
            claimed_id: None,
            claimed_origin: None,
            true_origin: None,
            score: None,
            low_confidence: false,
        }
    }

    fn spoof(frame: usize, timestamp: f64, verdict: &AuthVerdict) -> Self {
        let (origin, low) = match &verdict.identified_origin {
            Some(Identification::Ecu { label, low_confidence, .. }) => (label.clone(), *low_confidence),
            Some(Identification::Unknown) | None => ("UNKNOWN".to_string(), false),
        };
        Self {
            kind: AlertKind::Spoof,
            frame,
            timestamp,
            location: None,
            attack_type: None,
            missing: Vec::new(),
            no_transmission: false,
            claimed_id: Some(verdict.claimed_id),
            claimed_origin: Some(verdict.claimed_ecu.clone()),
            true_origin: Some(origin),
            score: Some(verdict.score),
            low_confidence: low,
        }
    }

    /// One JSON object, no trailing newline.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("alert fields always serialize")
    }
}

/// The monitoring window: the most recent accepted signal of each ECU.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorState {
    pub tp: f64,
    pub started_at: f64,
    last_auth: BTreeMap<String, Vec<f64>>,
}

impl MonitorState {
    pub fn new(tp: f64, started_at: f64) -> Self {
        Self {
            tp,
            started_at,
            last_auth: BTreeMap::new(),
        }
    }

    pub fn elapsed(&self, now: f64) -> bool {
        now - self.started_at >= self.tp
    }

    pub fn last_auth(&self, label: &str) -> Option<&[f64]> {
        self.last_auth.get(label).map(Vec::as_slice)
    }

    /// Authenticates the frame against its claimed ECU; only an accepted
    /// frame replaces that ECU's stored signal. Returns the verdict, or
    /// `None` for remote frames.
    pub fn ingest(
        &mut self,
        frame: &MonitoredFrame,
        auth: &dyn Authenticator,
        bus_compromised: bool,
    ) -> Result<Option<AuthVerdict>> {
        if frame.remote {
            return Ok(None);
        }
        let verdict = auth.authenticate(&frame.auth, frame.can_id, bus_compromised)?;
        if verdict.accepted {
            self.last_auth.insert(verdict.claimed_ecu.clone(), frame.location.clone());
        }
        Ok(Some(verdict))
    }

    /// Roster ECUs without a stored signal, in roster order.
    pub fn missing(&self, roster: &EcuRoster) -> Vec<String> {
        roster.labels().filter(|l| !self.last_auth.contains_key(*l)).map(str::to_string).collect()
    }

    /// [`Self::missing`] once the window may be closed: either it has
    /// elapsed or nobody is missing.
    pub fn get_missing_ecus(&self, roster: &EcuRoster, now: f64) -> Result<Vec<String>> {
        let missing = self.missing(roster);
        if !missing.is_empty() && !self.elapsed(now) {
            return Err(Error::Config("monitoring window still open".into()));
        }
        Ok(missing)
    }

    fn input(&self, roster: &EcuRoster) -> LocalizationInput {
        LocalizationInput {
            signals: roster
                .labels()
                .filter_map(|l| self.last_auth.get(l).map(|s| (l.to_string(), s.clone())))
                .collect(),
        }
    }
}

/// Insertion when every ECU was heard, otherwise replacement at the tap of
/// the first missing ECU. The localizer is never consulted for a replacement.
pub fn locate_physical_intrusion(
    state: &MonitorState,
    roster: &EcuRoster,
    now: f64,
    locator: &dyn InsertionLocator,
    rng: &mut ChaCha8Rng,
) -> Result<(AttackType, TapPoint, Vec<String>)> {
    let missing = state.get_missing_ecus(roster, now)?;
    if let Some(first) = missing.first() {
        let idx = roster.index_of(first).expect("missing labels come from the roster");
        return Ok((AttackType::Replacement, roster.entries()[idx].tap, missing));
    }
    let input = state.input(roster);
    assert_eq!(input.signals.len(), roster.len(), "insertion path needs one signal per ECU");
    Ok((AttackType::Insertion, locator.locate(&input, rng)?, missing))
}

#[derive(Debug, Clone)]
pub struct OrchestratorConfig {
    pub tp: f64,
    /// Optional k-of-n smoothing of the start-up decision.
    pub vote: Option<(usize, usize)>,
    pub seed: u64,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            tp: DEFAULT_TP,
            vote: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Startup,
    Monitoring,
    Continuous,
}

/// Counters of one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RunStats {
    pub frames: usize,
    pub remote_skipped: usize,
    pub unknown_ids: usize,
    pub rejected: usize,
    pub detections: usize,
    pub localizer_calls: usize,
}

pub struct Orchestrator<'a> {
    detector: &'a dyn IntrusionDetector,
    auth: &'a dyn Authenticator,
    locator: &'a dyn InsertionLocator,
    cfg: OrchestratorConfig,
    phase: Phase,
    vote: Option<KOfN>,
    votes_seen: usize,
    compromised: bool,
    monitor: Option<MonitorState>,
    rng: ChaCha8Rng,
    stats: RunStats,
    last_time: f64,
}

impl<'a> Orchestrator<'a> {
    pub fn new(
        detector: &'a dyn IntrusionDetector,
        auth: &'a dyn Authenticator,
        locator: &'a dyn InsertionLocator,
        cfg: OrchestratorConfig,
    ) -> Result<Self> {
        if !(cfg.tp >= 0.0) {
            return Err(Error::Config("monitoring period must be non-negative".into()));
        }
        let vote = cfg.vote.map(|(k, n)| KOfN::new(k, n)).transpose()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(TIE_BREAK_STREAM);
        Ok(Self {
            detector,
            auth,
            locator,
            cfg,
            phase: Phase::Startup,
            vote,
            votes_seen: 0,
            compromised: false,
            monitor: None,
            rng,
            stats: RunStats::default(),
            last_time: 0.0,
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn bus_compromised(&self) -> bool {
        self.compromised
    }

    pub fn stats(&self) -> RunStats {
        self.stats
    }

    pub fn monitor(&self) -> Option<&MonitorState> {
        self.monitor.as_ref()
    }

    /// Processes one frame; alerts come back in the order they arise.
    pub fn ingest(&mut self, frame: &MonitoredFrame) -> Result<Vec<Alert>> {
        let index = self.stats.frames;
        self.stats.frames += 1;
        self.last_time = frame.timestamp;
        let mut alerts = Vec::new();
        if frame.remote {
            self.stats.remote_skipped += 1;
            return Ok(alerts);
        }
        if self.auth.roster().owner_of(frame.can_id).is_none() {
            self.stats.unknown_ids += 1;
            return Ok(alerts);
        }
        match self.phase {
            Phase::Startup => {
                let positive = self.detector.is_bus_compromised(&frame.detection)?;
                let decided = match &mut self.vote {
                    None => Some(positive),
                    Some(v) => {
                        self.votes_seen += 1;
                        let hit = v.push(positive);
                        let n = self.cfg.vote.map_or(1, |(_, n)| n);
                        (hit || self.votes_seen >= n).then_some(hit)
                    }
                };
                match decided {
                    Some(true) => {
                        self.stats.detections += 1;
                        self.compromised = true;
                        self.phase = Phase::Monitoring;
                        self.monitor = Some(MonitorState::new(self.cfg.tp, frame.timestamp));
                        self.monitor_frame(index, frame, &mut alerts)?;
                    }
                    Some(false) => {
                        self.phase = Phase::Continuous;
                        self.authenticate(index, frame, &mut alerts)?;
                    }
                    None => {}
                }
            }
            Phase::Monitoring => {
                let elapsed = self.monitor.as_ref().is_some_and(|m| m.elapsed(frame.timestamp));
                if elapsed {
                    self.resolve(index, frame.timestamp, &mut alerts)?;
                    self.authenticate(index, frame, &mut alerts)?;
                } else {
                    self.monitor_frame(index, frame, &mut alerts)?;
                }
            }
            Phase::Continuous => self.authenticate(index, frame, &mut alerts)?,
        }
        Ok(alerts)
    }

    /// Closes the stream. A window that is still open is resolved only
    /// when its period has passed.
    pub fn finish(&mut self, end_time: f64) -> Result<Vec<Alert>> {
        let mut alerts = Vec::new();
        if self.phase == Phase::Monitoring {
            let t = end_time.max(self.last_time);
            self.resolve(self.stats.frames.saturating_sub(1), t, &mut alerts)?;
        }
        Ok(alerts)
    }

    fn monitor_frame(&mut self, index: usize, frame: &MonitoredFrame, alerts: &mut Vec<Alert>) -> Result<()> {
        let monitor = self.monitor.as_mut().expect("monitoring phase owns a window");
        if let Some(v) = monitor.ingest(frame, self.auth, true)? {
            if !v.accepted {
                self.stats.rejected += 1;
            }
        }
        // Every ECU heard: the result cannot change by waiting.
        if monitor.missing(self.auth.roster()).is_empty() {
            self.resolve(index, frame.timestamp, alerts)?;
        }
        Ok(())
    }

    fn resolve(&mut self, index: usize, now: f64, alerts: &mut Vec<Alert>) -> Result<()> {
        assert!(self.compromised, "localisation runs only after a positive detection");
        let monitor = self.monitor.as_ref().expect("monitoring phase owns a window");
        let (attack, location, missing) =
            locate_physical_intrusion(monitor, self.auth.roster(), now, self.locator, &mut self.rng)?;
        if attack == AttackType::Insertion {
            self.stats.localizer_calls += 1;
        }
        alerts.push(Alert::topology(index, now, attack, location, missing));
        self.phase = Phase::Continuous;
        Ok(())
    }

    fn authenticate(&mut self, index: usize, frame: &MonitoredFrame, alerts: &mut Vec<Alert>) -> Result<()> {
        let verdict = self.auth.authenticate(&frame.auth, frame.can_id, self.compromised)?;
        if !verdict.accepted {
            self.stats.rejected += 1;
            alerts.push(Alert::spoof(index, frame.timestamp, &verdict));
        }
        Ok(())
    }
}

/// Runs a whole frame sequence and returns every alert in order.
pub fn continuous_loop(orchestrator: &mut Orchestrator<'_>, frames: &[MonitoredFrame]) -> Result<Vec<Alert>> {
    let mut out = Vec::new();
    for f in frames {
        out.extend(orchestrator.ingest(f)?);
    }
    let end = frames.last().map_or(0.0, |f| f.timestamp);
    out.extend(orchestrator.finish(end)?);
    Ok(out)
}

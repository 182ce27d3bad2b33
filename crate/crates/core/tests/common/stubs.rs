//! Stub models and scripted traffic for state-machine fixtures.

use std::cell::Cell;

use canloc_core::auth::{AuthVerdict, Identification};
use canloc_core::bussim::TapPoint;
use canloc_core::localizer::LocalizationInput;
use canloc_core::orchestrator::{Authenticator, InsertionLocator, IntrusionDetector, MonitoredFrame};
use canloc_core::roster::EcuRoster;
use canloc_core::Result;
use rand_chacha::ChaCha8Rng;

pub const ATTACKER: f64 = 99.0;

/// Flags a frame when its first detection value exceeds one half.
pub struct StubDetector;

impl IntrusionDetector for StubDetector {
    fn is_bus_compromised(&self, sig: &[f64]) -> Result<bool> {
        Ok(sig[0] > 0.5)
    }
}

/// The first auth value carries the true roster index of the sender.
pub struct StubAuth(pub EcuRoster);

impl Authenticator for StubAuth {
    fn roster(&self) -> &EcuRoster {
        &self.0
    }

    fn authenticate(&self, sig: &[f64], claimed_id: u16, compromised: bool) -> Result<AuthVerdict> {
        let owner = self.0.owner_of(claimed_id).expect("fixtures use roster identifiers");
        let accepted = sig[0] == owner as f64;
        let identified_origin = (!accepted).then(|| match self.0.entries().get(sig[0] as usize) {
            Some(e) => Identification::Ecu {
                label: e.label.clone(),
                score: 0.9,
                low_confidence: false,
            },
            None if compromised => Identification::Unknown,
            None => Identification::Ecu {
                label: self.0.entries()[0].label.clone(),
                score: 0.1,
                low_confidence: true,
            },
        });
        Ok(AuthVerdict {
            claimed_id,
            claimed_ecu: self.0.entries()[owner].label.clone(),
            score: if accepted { 0.9 } else { 0.1 },
            accepted,
            identified_origin,
        })
    }
}

pub struct StubLocator {
    pub answer: TapPoint,
    pub calls: Cell<usize>,
    pub seen: Cell<usize>,
}

impl StubLocator {
    pub fn new(answer: TapPoint) -> Self {
        Self {
            answer,
            calls: Cell::new(0),
            seen: Cell::new(0),
        }
    }
}

impl InsertionLocator for StubLocator {
    fn locate(&self, input: &LocalizationInput, _rng: &mut ChaCha8Rng) -> Result<TapPoint> {
        self.calls.set(self.calls.get() + 1);
        self.seen.set(input.signals.len());
        Ok(self.answer)
    }
}

pub fn roster() -> EcuRoster {
    EcuRoster::reference()
}

/// Frame `i` claims ECU `claim`, is really sent by `sender`.
pub fn frame(i: usize, claim: usize, sender: f64, compromised: bool) -> MonitoredFrame {
    MonitoredFrame {
        timestamp: i as f64 * 0.01,
        can_id: roster().entries()[claim].ids[0],
        remote: false,
        detection: vec![if compromised { 1.0 } else { 0.0 }],
        auth: vec![sender],
        location: vec![claim as f64; 4],
    }
}

/// Round-robin over the roster; claims listed in `spoofed` come from the attacker.
pub fn schedule(n: usize, compromised: bool, spoofed: &[usize]) -> Vec<MonitoredFrame> {
    (0..n)
        .map(|i| {
            let claim = i % 5;
            let sender = if spoofed.contains(&claim) { ATTACKER } else { claim as f64 };
            frame(i, claim, sender, compromised)
        })
        .collect()
}

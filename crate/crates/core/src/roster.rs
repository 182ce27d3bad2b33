//! The legitimate ECUs of a vehicle: label, tap and owned CAN identifiers.

use serde::{Deserialize, Serialize};

use crate::bussim::{legitimate_ecus, TapPoint};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub label: String,
    pub tap: TapPoint,
    pub ids: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<RosterEntry>", into = "Vec<RosterEntry>")]
pub struct EcuRoster {
    entries: Vec<RosterEntry>,
}

impl EcuRoster {
    /// Checks for unique labels and taps and disjoint identifier sets.
    pub fn new(entries: Vec<RosterEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("roster"));
        }
        for (i, e) in entries.iter().enumerate() {
            for prev in &entries[..i] {
                if prev.label == e.label {
                    return Err(Error::Config(format!("ECU {} listed twice", e.label)));
                }
                if prev.tap == e.tap {
                    return Err(Error::Config(format!("{} and {} share tap {}", prev.label, e.label, e.tap)));
                }
                if let Some(id) = e.ids.iter().find(|id| prev.ids.contains(id)) {
                    return Err(Error::Config(format!("identifier {id:#05x} owned by {} and {}", prev.label, e.label)));
                }
            }
        }
        Ok(Self { entries })
    }

    /// The five reference ECUs at A, C, E, G and I.
    pub fn reference() -> Self {
        let entries = legitimate_ecus()
            .into_iter()
            .map(|e| RosterEntry {
                label: e.label.to_string(),
                tap: e.point,
                ids: e.ids.to_vec(),
            })
            .collect();
        Self { entries }
    }

    pub fn entries(&self) -> &[RosterEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.label.as_str())
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.label == label)
    }

    /// Index of the ECU that owns `id`.
    pub fn owner_of(&self, id: u16) -> Option<usize> {
        self.entries.iter().position(|e| e.ids.contains(&id))
    }
}

impl TryFrom<Vec<RosterEntry>> for EcuRoster {
    type Error = Error;

    fn try_from(entries: Vec<RosterEntry>) -> Result<Self> {
        Self::new(entries)
    }
}

impl From<EcuRoster> for Vec<RosterEntry> {
    fn from(r: EcuRoster) -> Self {
        r.entries
    }
}

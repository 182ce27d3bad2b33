//! False rejection / acceptance rates and confusion matrices.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One authentication decision with its ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthOutcome {
    pub claimed_ecu: String,
    /// True when the frame really came from `claimed_ecu`.
    pub legitimate: bool,
    pub accepted: bool,
}

/// Per-ECU counts behind FRR and FAR.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EcuRates {
    pub ecu: String,
    pub legitimate: usize,
    pub false_rejects: usize,
    pub impostor: usize,
    pub false_accepts: usize,
}

impl EcuRates {
    /// Rejected legitimate claims over all legitimate claims.
    pub fn frr(&self) -> Option<f64> {
        (self.legitimate > 0).then(|| self.false_rejects as f64 / self.legitimate as f64)
    }

    /// Accepted impostor claims over all impostor claims.
    pub fn far(&self) -> Option<f64> {
        (self.impostor > 0).then(|| self.false_accepts as f64 / self.impostor as f64)
    }
}

/// Tallies outcomes for a fixed ECU list; claims outside it are an error.
pub fn auth_rates(ecus: &[String], outcomes: &[AuthOutcome]) -> Result<Vec<EcuRates>> {
    let mut rates: Vec<EcuRates> = ecus
        .iter()
        .map(|e| EcuRates {
            ecu: e.clone(),
            ..EcuRates::default()
        })
        .collect();
    for o in outcomes {
        let r = rates
            .iter_mut()
            .find(|r| r.ecu == o.claimed_ecu)
            .ok_or_else(|| Error::Config(format!("claim for unknown ECU `{}`", o.claimed_ecu)))?;
        if o.legitimate {
            r.legitimate += 1;
            r.false_rejects += usize::from(!o.accepted);
        } else {
            r.impostor += 1;
            r.false_accepts += usize::from(o.accepted);
        }
    }
    Ok(rates)
}

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let n = classes.len();
        Self {
            classes,
            counts: vec![vec![0; n]; n],
        }
    }

    fn index(&self, class: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| Error::Config(format!("class `{class}` is not in the matrix")))
    }

    pub fn add(&mut self, truth: &str, predicted: &str) -> Result<()> {
        let (t, p) = (self.index(truth)?, self.index(predicted)?);
        self.counts[t][p] += 1;
        Ok(())
    }

    pub fn row_total(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.correct() as f64 / n as f64)
    }

    /// Diagonal over row total; `None` for classes without samples.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.classes.len())
            .map(|i| {
                let n = self.row_total(i);
                (n > 0).then(|| self.counts[i][i] as f64 / n as f64)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ecus: Vec<EcuRates>,
    pub confusion: Option<ConfusionMatrix>,
    pub accuracy: Option<f64>,
    pub samples: usize,
}

impl MetricsReport {
    pub fn from_auth(ecus: &[String], outcomes: &[AuthOutcome]) -> Result<Self> {
        let rates = auth_rates(ecus, outcomes)?;
        let correct = outcomes.iter().filter(|o| o.accepted == o.legitimate).count();
        Ok(Self {
            ecus: rates,
            confusion: None,
            accuracy: (!outcomes.is_empty()).then(|| correct as f64 / outcomes.len() as f64),
            samples: outcomes.len(),
        })
    }

    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        Self {
            ecus: Vec::new(),
            accuracy: confusion.accuracy(),
            samples: confusion.total(),
            confusion: Some(confusion),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report fields always serialize")
    }
}

fn rate(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.ecus.is_empty() {
            writeln!(f, "{:<6} {:>8} {:>8} {:>8} {:>8}", "ECU", "legit", "FRR", "impostor", "FAR")?;
            for r in &self.ecus {
                writeln!(f, "{:<6} {:>8} {:>8} {:>8} {:>8}", r.ecu, r.legitimate, rate(r.frr()), r.impostor, rate(r.far()))?;
            }
        }
        if let Some(c) = &self.confusion {
            let mut head = format!("{:<6}", "true");
            for name in &c.classes {
                let _ = write!(head, " {name:>6}");
            }
            writeln!(f, "{head}")?;
            for (name, row) in c.classes.iter().zip(&c.counts) {
                let mut line = format!("{name:<6}");
                for n in row {
                    let _ = write!(line, " {n:>6}");
                }
                writeln!(f, "{line}")?;
            }
        }
        writeln!(f, "samples {} accuracy {}", self.samples, rate(self.accuracy))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn claim(ecu: &str, legitimate: bool, accepted: bool) -> AuthOutcome {
        AuthOutcome {
            claimed_ecu: ecu.into(),
            legitimate,
            accepted,
        }
    }

    #[test]
    fn one_rejection_in_a_hundred_is_one_percent() {
        let mut v: Vec<_> = (0..100).map(|i| claim("A", true, i != 17)).collect();
        v.push(claim("A", false, false));
        let r = &auth_rates(&names(&["A"]), &v).unwrap()[0];
        assert_eq!(r.frr(), Some(0.01));
        assert_eq!(r.far(), Some(0.0));
    }

    #[test]
    fn hand_counted_ten_frame_set() {
        // A: 4 legit (1 rejected), 1 impostor (accepted).
        // C: 3 legit (0 rejected), 2 impostors (0 accepted).
        let v = vec![
            claim("A", true, true),
            claim("A", true, false),
            claim("A", true, true),
            claim("A", true, true),
            claim("A", false, true),
            claim("C", true, true),
            claim("C", true, true),
            claim("C", true, true),
            claim("C", false, false),
            claim("C", false, false),
        ];
        let rep = MetricsReport::from_auth(&names(&["A", "C"]), &v).unwrap();
        assert_eq!(rep.ecus[0].frr(), Some(0.25));
        assert_eq!(rep.ecus[0].far(), Some(1.0));
        assert_eq!(rep.ecus[1].frr(), Some(0.0));
        assert_eq!(rep.ecus[1].far(), Some(0.0));
        assert_eq!(rep.accuracy, Some(0.8));
        assert_eq!(rep.samples, 10);
    }

    #[test]
    fn empty_classes_have_no_rate() {
        let r = &auth_rates(&names(&["A"]), &[]).unwrap()[0];
        assert_eq!((r.frr(), r.far()), (None, None));
        assert!(auth_rates(&names(&["A"]), &[claim("Z", true, true)]).is_err());
    }

    #[test]
    fn perfect_classifier_is_diagonal() {
        let classes = names(&["B", "D", "F", "H", "J"]);
        let mut c = ConfusionMatrix::new(classes.clone());
        for (i, k) in classes.iter().enumerate() {
            for _ in 0..=i {
                c.add(k, k).unwrap();
            }
        }
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(c.counts[i][j] == 0, i != j);
            }
            assert_eq!(c.row_total(i), i + 1);
        }
        let rep = MetricsReport::from_confusion(c);
        assert_eq!(rep.accuracy, Some(1.0));
        assert_eq!(rep.samples, 15);
    }

    #[test]
    fn hand_counted_confusion() {
        let mut c = ConfusionMatrix::new(names(&["B", "D"]));
        for (t, p) in [("B", "B"), ("B", "D"), ("B", "B"), ("D", "D"), ("D", "D"), ("D", "B"), ("D", "D"), ("B", "B"), ("D", "D"), ("B", "B")] {
            c.add(t, p).unwrap();
        }
        assert_eq!(c.counts, vec![vec![4, 1], vec![1, 4]]);
        assert_eq!(c.accuracy(), Some(0.8));
        assert_eq!(c.per_class_accuracy(), vec![Some(0.8), Some(0.8)]);
        assert!(c.add("B", "Q").is_err());
    }

    #[test]
    fn report_renders_and_round_trips() {
        let rep = MetricsReport::from_auth(&names(&["A"]), &[claim("A", true, true)]).unwrap();
        let back: MetricsReport = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(back, rep);
        assert!(rep.to_string().contains("FRR"));
    }
}

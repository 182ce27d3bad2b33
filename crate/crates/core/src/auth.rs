//! Per-ECU binary CNN authentication and identification of a frame's origin.

use std::fs;
use std::path::Path;

use canloc_neural::{
    load_model, save_model, train_with_validation, Activation, CompiledModel, Dataset, LayerSpec, LossArgs,
    Sequential, SplitStrategy, TrainConfig, TrainHistory,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roster::EcuRoster;

const KIND_KEY: &str = "model.kind";
const KIND: &str = "auth";
const ECU_KEY: &str = "auth.ecu";
pub const MANIFEST_FILE: &str = "roster.json";

/// Scores at or above this accept the claimed sender.
pub const ACCEPT_THRESHOLD: f64 = 0.5;
pub const CONV_FILTERS: usize = 32;
pub const CONV_KERNEL: usize = 3;
pub const DENSE_UNITS: usize = 100;
pub const DROPOUT: f64 = 0.5;

/// Two 32-filter convolutions, max pooling, dropout, a 100-unit layer,
/// dropout and a sigmoid score.
pub fn binary_cnn_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv1d { filters: CONV_FILTERS, kernel: CONV_KERNEL },
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::Conv1d { filters: CONV_FILTERS, kernel: CONV_KERNEL },
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::MaxPool1d { size: 2 },
        LayerSpec::Dropout { rate: DROPOUT },
        LayerSpec::Dense { units: DENSE_UNITS },
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::Dropout { rate: DROPOUT },
        LayerSpec::Dense { units: 1 },
        LayerSpec::Activation(Activation::Sigmoid),
    ]
}

#[derive(Debug, Clone)]
pub struct AuthConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub patience: usize,
    /// Inverse-frequency class weights; off gives plain cross-entropy.
    pub class_weighting: bool,
    pub seed: u64,
}

impl Default for AuthConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-4,
            validation_fraction: 0.3,
            patience: 10,
            class_weighting: true,
            seed: 0,
        }
    }
}

/// `w_c = N / (2 N_c)` for the negative and positive class.
pub fn class_weights(labels: &[bool]) -> Result<(f64, f64)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 {
        return Err(Error::ClassAbsent("positive".into()));
    }
    if neg == 0 {
        return Err(Error::ClassAbsent("negative".into()));
    }
    let n = labels.len() as f64;
    Ok((n / (2.0 * neg as f64), n / (2.0 * pos as f64)))
}

/// One ECU's trained classifier.
#[derive(Debug, Clone)]
pub struct BinaryCnnModel {
    ecu: String,
    cnn: Sequential,
    plan: CompiledModel,
}

impl BinaryCnnModel {
    pub fn from_parts(ecu: String, cnn: Sequential) -> Result<Self> {
        if cnn.output_shape() != [1] || cnn.input_shape().len() != 2 {
            return Err(Error::Model("authentication model must map [1, L] to one score".into()));
        }
        let plan = CompiledModel::compile(&cnn)?;
        Ok(Self { ecu, cnn, plan })
    }

    pub fn ecu(&self) -> &str {
        &self.ecu
    }

    pub fn cnn(&self) -> &Sequential {
        &self.cnn
    }

    pub fn feature_len(&self) -> usize {
        self.cnn.input_shape()[1]
    }

    /// Probability that `sig` was sent by this ECU.
    pub fn score(&self, sig: &[f64]) -> Result<f64> {
        if sig.len() != self.feature_len() {
            return Err(Error::LengthMismatch {
                expected: self.feature_len(),
                actual: sig.len(),
            });
        }
        Ok(self.plan.run(sig)?[0])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut cnn = self.cnn.clone();
        cnn.metadata.insert(KIND_KEY.into(), KIND.into());
        cnn.metadata.insert(ECU_KEY.into(), self.ecu.clone());
        save_model(&cnn, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cnn = load_model(path)?;
        if cnn.metadata.get(KIND_KEY).map(String::as_str) != Some(KIND) {
            return Err(Error::Model(format!("{} is not an authentication model", path.display())));
        }
        let ecu = cnn
            .metadata
            .get(ECU_KEY)
            .cloned()
            .ok_or_else(|| Error::Model("ECU label missing".into()))?;
        Self::from_parts(ecu, cnn)
    }
}

/// Trains `ecu`'s classifier on signals labelled `true` when sent by it,
/// in acquisition order. The validation tail is taken per class.
pub fn train_auth(ecu: &str, signals: &[(Vec<f64>, bool)], cfg: &AuthConfig) -> Result<(BinaryCnnModel, TrainHistory)> {
    let first = signals.first().ok_or(Error::Empty("authentication training set"))?;
    let len = first.0.len();
    if let Some((bad, _)) = signals.iter().find(|(s, _)| s.len() != len) {
        return Err(Error::LengthMismatch {
            expected: len,
            actual: bad.len(),
        });
    }
    let labels: Vec<bool> = signals.iter().map(|(_, l)| *l).collect();
    class_weights(&labels)?;
    let data = Dataset::new(
        signals.iter().map(|(s, _)| s.clone()).collect(),
        labels.iter().map(|&l| vec![if l { 1.0 } else { 0.0 }]).collect(),
    )?
    .with_labels(labels.iter().map(|&l| l as usize).collect())?;
    let (tr, val) = data.split(cfg.validation_fraction, SplitStrategy::PerClassChronological)?;
    let tr_labels: Vec<bool> = tr.labels.as_ref().map_or_else(Vec::new, |l| l.iter().map(|&c| c == 1).collect());
    let loss_args = if cfg.class_weighting {
        let (w0, w1) = class_weights(&tr_labels)?;
        LossArgs {
            class_weights: Some(vec![w0, w1]),
        }
    } else {
        LossArgs::default()
    };
    let mut cnn = Sequential::from_specs(&[1, len], &binary_cnn_specs(), cfg.seed)?;
    let tcfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        optimizer: "rmsprop".into(),
        loss: "weighted_bce".into(),
        loss_args,
        validation_fraction: cfg.validation_fraction,
        split: SplitStrategy::PerClassChronological,
        patience: cfg.patience,
        seed: cfg.seed,
    };
    let history = train_with_validation(&mut cnn, &tr, &val, &tcfg)?;
    Ok((BinaryCnnModel::from_parts(ecu.to_string(), cnn)?, history))
}

/// Where a signal most likely came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Identification {
    Ecu {
        label: String,
        score: f64,
        /// Every score was below the acceptance threshold on a clean bus.
        low_confidence: bool,
    },
    /// No model claims the signal and the bus has changed: a new device.
    Unknown,
}

impl Identification {
    pub fn label(&self) -> &str {
        match self {
            Self::Ecu { label, .. } => label,
            Self::Unknown => "UNKNOWN",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuthVerdict {
    pub claimed_id: u16,
    pub claimed_ecu: String,
    pub score: f64,
    pub accepted: bool,
    /// Filled only when the claim is rejected.
    pub identified_origin: Option<Identification>,
}

/// Applies the acceptance rule to a score.
pub fn accepts(score: f64) -> bool {
    score >= ACCEPT_THRESHOLD
}

/// Index of the largest score, lowest index on ties.
fn best(scores: &[f64]) -> usize {
    let mut b = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[b] {
            b = i;
        }
    }
    b
}

/// Identification from a full score vector in roster order.
pub fn identify_scores(labels: &[&str], scores: &[f64], bus_compromised: bool) -> Identification {
    let b = best(scores);
    let top = scores[b];
    if !accepts(top) && bus_compromised {
        return Identification::Unknown;
    }
    Identification::Ecu {
        label: labels[b].to_string(),
        score: top,
        low_confidence: !accepts(top),
    }
}

/// A roster with one trained model per ECU, in roster order.
#[derive(Debug, Clone)]
pub struct AuthBundle {
    roster: EcuRoster,
    models: Vec<BinaryCnnModel>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    roster: EcuRoster,
    models: Vec<String>,
}

impl AuthBundle {
    pub fn new(roster: EcuRoster, models: Vec<BinaryCnnModel>) -> Result<Self> {
        if models.len() != roster.len() {
            return Err(Error::Model(format!("{} models for {} ECUs", models.len(), roster.len())));
        }
        for (e, m) in roster.entries().iter().zip(&models) {
            if e.label != m.ecu {
                return Err(Error::Model(format!("model for {} where {} was expected", m.ecu, e.label)));
            }
        }
        let len = models[0].feature_len();
        if let Some(m) = models.iter().find(|m| m.feature_len() != len) {
            return Err(Error::LengthMismatch {
                expected: len,
                actual: m.feature_len(),
            });
        }
        Ok(Self { roster, models })
    }

    pub fn roster(&self) -> &EcuRoster {
        &self.roster
    }

    pub fn models(&self) -> &[BinaryCnnModel] {
        &self.models
    }

    pub fn feature_len(&self) -> usize {
        self.models[0].feature_len()
    }

    pub fn scores(&self, sig: &[f64]) -> Result<Vec<f64>> {
        self.models.iter().map(|m| m.score(sig)).collect()
    }

    /// Runs every model and returns the best-scoring origin.
    pub fn identify(&self, sig: &[f64], bus_compromised: bool) -> Result<Identification> {
        let scores = self.scores(sig)?;
        let labels: Vec<&str> = self.roster.labels().collect();
        Ok(identify_scores(&labels, &scores, bus_compromised))
    }

    /// Scores `sig` with the model of the ECU owning `claimed_id`.
    pub fn authenticate(&self, sig: &[f64], claimed_id: u16, bus_compromised: bool) -> Result<AuthVerdict> {
        let owner = self.roster.owner_of(claimed_id).ok_or(Error::UnknownId(claimed_id))?;
        let score = self.models[owner].score(sig)?;
        let accepted = accepts(score);
        let identified_origin = if accepted { None } else { Some(self.identify(sig, bus_compromised)?) };
        Ok(AuthVerdict {
            claimed_id,
            claimed_ecu: self.roster.entries()[owner].label.clone(),
            score,
            accepted,
            identified_origin,
        })
    }

    /// Writes one model file per ECU plus the roster manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for m in &self.models {
            let name = format!("{}.cloc", m.ecu);
            m.save(&dir.join(&name))?;
            files.push(name);
        }
        let manifest = Manifest {
            roster: self.roster.clone(),
            models: files,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Model(e.to_string()))?;
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Model(format!("roster manifest: {e}")))?;
        let models = manifest
            .models
            .iter()
            .map(|f| {
                if f.contains(['/', '\\']) {
                    return Err(Error::Model(format!("model path `{f}` leaves the bundle")));
                }
                BinaryCnnModel::load(&dir.join(f))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(manifest.roster, models)
    }
}

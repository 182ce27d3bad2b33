//! Autoencoder topology-change detector with a mean-plus-deviation threshold.

use std::collections::VecDeque;
use std::path::Path;

use canloc_neural::{
    load_model, save_model, train_with_validation, Activation, Dataset, LayerSpec, Sequential, TrainConfig, TrainHistory,
};

use crate::error::{Error, Result};

/// Metadata key holding the threshold as IEEE-754 bits in hex.
const THR_KEY: &str = "detector.thr";
const KIND_KEY: &str = "model.kind";
const KIND: &str = "detector";

/// Encoder widths as fractions of the input length.
pub const HIDDEN_FRACTION: f64 = 0.5;
pub const BOTTLENECK_FRACTION: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            patience: 10,
            seed: 0,
        }
    }
}

/// Layer stack `L -> L/2 -> L/4 -> L/2 -> L` with batch normalisation and
/// leaky ReLU on the hidden layers and a linear output.
pub fn autoencoder_specs(feature_len: usize) -> Vec<LayerSpec> {
    let hidden = ((feature_len as f64 * HIDDEN_FRACTION).round() as usize).max(1);
    let bottleneck = ((feature_len as f64 * BOTTLENECK_FRACTION).round() as usize).max(1);
    let mut specs = Vec::new();
    for units in [hidden, bottleneck, hidden] {
        specs.push(LayerSpec::Dense { units });
        specs.push(LayerSpec::BatchNorm);
        specs.push(LayerSpec::Activation(Activation::LeakyRelu));
    }
    specs.push(LayerSpec::Dense { units: feature_len });
    specs.push(LayerSpec::Activation(Activation::Linear));
    specs
}

/// `mean + std` with the population standard deviation.
pub fn compute_threshold(val_mses: &[f64]) -> Result<f64> {
    if val_mses.is_empty() {
        return Err(Error::Empty("validation error list"));
    }
    let n = val_mses.len() as f64;
    let mean = val_mses.iter().sum::<f64>() / n;
    let var = val_mses.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(mean + var.sqrt())
}

#[derive(Debug, Clone)]
pub struct DetectorModel {
    autoencoder: Sequential,
    thr: f64,
}

impl DetectorModel {
    pub fn from_parts(autoencoder: Sequential, thr: f64) -> Result<Self> {
        let shape = autoencoder.input_shape();
        if shape.len() != 1 || autoencoder.output_shape() != shape {
            return Err(Error::Model("detector must map a flat vector onto itself".into()));
        }
        Ok(Self { autoencoder, thr })
    }

    pub fn thr(&self) -> f64 {
        self.thr
    }

    pub fn feature_len(&self) -> usize {
        self.autoencoder.input_shape()[0]
    }

    pub fn autoencoder(&self) -> &Sequential {
        &self.autoencoder
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.feature_len() {
            return Err(Error::LengthMismatch {
                expected: self.feature_len(),
                actual: len,
            });
        }
        Ok(())
    }

    /// Mean squared reconstruction error of one feature vector.
    pub fn reconstruction_error(&self, sig: &[f64]) -> Result<f64> {
        self.check(sig.len())?;
        let out = self.autoencoder.infer_one(sig)?;
        Ok(mse(sig, &out))
    }

    /// Reconstruction errors of many vectors, evaluated in batches.
    pub fn reconstruction_errors<S: AsRef<[f64]>>(&self, sigs: &[S]) -> Result<Vec<f64>> {
        for s in sigs {
            self.check(s.as_ref().len())?;
        }
        let out = self.autoencoder.predict(sigs)?;
        Ok(sigs.iter().zip(&out).map(|(s, o)| mse(s.as_ref(), o)).collect())
    }

    /// True when the reconstruction error strictly exceeds the threshold.
    pub fn is_bus_compromised(&self, sig: &[f64]) -> Result<bool> {
        Ok(self.reconstruction_error(sig)? > self.thr)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut model = self.autoencoder.clone();
        model.metadata.insert(KIND_KEY.into(), KIND.into());
        model.metadata.insert(THR_KEY.into(), format!("{:016x}", self.thr.to_bits()));
        save_model(&model, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model = load_model(path)?;
        if model.metadata.get(KIND_KEY).map(String::as_str) != Some(KIND) {
            return Err(Error::Model(format!("{} is not a detector model", path.display())));
        }
        let thr = model
            .metadata
            .get(THR_KEY)
            .and_then(|s| u64::from_str_radix(s, 16).ok())
            .map(f64::from_bits)
            .ok_or_else(|| Error::Model("detector threshold missing".into()))?;
        Self::from_parts(model, thr)
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Trains the autoencoder on clean features, early-stopped on the clean
/// validation set, and sets the threshold from the validation errors.
pub fn train_detector(tr_clean: &[Vec<f64>], val_clean: &[Vec<f64>], cfg: &DetectorConfig) -> Result<DetectorModel> {
    Ok(train_detector_with_history(tr_clean, val_clean, cfg)?.0)
}

/// [`train_detector`] that also returns the loss curves.
pub fn train_detector_with_history(
    tr_clean: &[Vec<f64>],
    val_clean: &[Vec<f64>],
    cfg: &DetectorConfig,
) -> Result<(DetectorModel, TrainHistory)> {
    if tr_clean.is_empty() {
        return Err(Error::Empty("clean training set"));
    }
    if val_clean.is_empty() {
        return Err(Error::Empty("clean validation set"));
    }
    let len = tr_clean[0].len();
    if let Some(bad) = tr_clean.iter().chain(val_clean).find(|v| v.len() != len) {
        return Err(Error::LengthMismatch {
            expected: len,
            actual: bad.len(),
        });
    }
    let mut ae = Sequential::from_specs(&[len], &autoencoder_specs(len), cfg.seed)?;
    let tcfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        optimizer: "adam".into(),
        loss: "mse".into(),
        patience: cfg.patience,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let history = train_with_validation(
        &mut ae,
        &Dataset::reconstruction(tr_clean.to_vec()),
        &Dataset::reconstruction(val_clean.to_vec()),
        &tcfg,
    )?;
    let model = DetectorModel::from_parts(ae, 0.0)?;
    let errs = model.reconstruction_errors(val_clean)?;
    let thr = compute_threshold(&errs)?;
    Ok((DetectorModel { thr, ..model }, history))
}

/// Optional smoothing: the bus is reported compromised once `k` of the last
/// `n` single-frame decisions were positive.
#[derive(Debug, Clone)]
pub struct KOfN {
    k: usize,
    n: usize,
    window: VecDeque<bool>,
}

impl KOfN {
    pub fn new(k: usize, n: usize) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::Config(format!("vote needs 1 <= k <= n, got {k} of {n}")));
        }
        Ok(Self {
            k,
            n,
            window: VecDeque::with_capacity(n),
        })
    }

    pub fn push(&mut self, positive: bool) -> bool {
        if self.window.len() == self.n {
            self.window.pop_front();
        }
        self.window.push_back(positive);
        self.window.iter().filter(|&&p| p).count() >= self.k
    }
}

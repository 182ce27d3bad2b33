//! Insertion-point localisation: augmentation of per-point recordings, a
//! VGG-style 1-D classifier, and a majority vote over one signal per ECU.

use std::path::Path;

use canloc_neural::{
    load_model, save_model, train_with_validation, Activation, Dataset, LayerSpec, LossArgs, Sequential, SplitStrategy,
    TrainConfig, TrainHistory,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bussim::TapPoint;
use crate::error::{Error, Result};

const KIND_KEY: &str = "model.kind";
const KIND: &str = "localizer";
const CLASSES_KEY: &str = "localizer.classes";

pub const DEFAULT_COPIES: usize = 20;
pub const DEFAULT_MAX_ROLL: usize = 10;
/// Noise standard deviation unit, as a fraction of the normalised range.
pub const DEFAULT_SIGMA_SCALE: f64 = 0.02;
pub const DEFAULT_WIDTH: f64 = 0.125;

/// Conv layers per block and their full-width filter counts.
const VGG_BLOCKS: [(usize, usize); 5] = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)];

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationConfig {
    pub points: Vec<TapPoint>,
    /// Copies per recorded signal.
    pub k: usize,
    /// Largest roll-off, inclusive.
    pub r: usize,
    pub mu: f64,
    pub sigma: f64,
    /// Multiplies `mu` and `sigma` into normalised feature units.
    pub sigma_scale: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            points: TapPoint::INSERTION_POINTS.to_vec(),
            k: DEFAULT_COPIES,
            r: DEFAULT_MAX_ROLL,
            mu: 0.0,
            sigma: 1.0,
            sigma_scale: DEFAULT_SIGMA_SCALE,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("augmentation needs K >= 1".into()));
        }
        if self.points.is_empty() {
            return Err(Error::Config("no insertion points".into()));
        }
        for (i, p) in self.points.iter().enumerate() {
            if self.points[..i].contains(p) {
                return Err(Error::Config(format!("insertion point {p} listed twice")));
            }
        }
        if !(self.sigma >= 0.0 && self.sigma_scale >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Config("noise parameters must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Right cyclic rotation by `r` positions.
pub fn roll_off(r: usize, s: &[f64]) -> Vec<f64> {
    let mut out = s.to_vec();
    let n = out.len();
    if n > 0 {
        out.rotate_right(r % n);
    }
    out
}

/// One augmented example.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSignal {
    pub values: Vec<f64>,
    /// Index into the configured point list.
    pub class: usize,
    /// Index of the source recording within its point's set.
    pub source: usize,
}

/// Produces `k` noisy, rolled copies of every recording, point by point.
/// `sets` pairs each insertion point with its recordings in acquisition order.
pub fn generate_signals(
    sets: &[(TapPoint, Vec<Vec<f64>>)],
    cfg: &AugmentationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<AugmentedSignal>> {
    cfg.validate()?;
    let noise = Normal::new(cfg.mu * cfg.sigma_scale, cfg.sigma * cfg.sigma_scale)
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    for (class, &p) in cfg.points.iter().enumerate() {
        let signals = sets
            .iter()
            .find(|(q, _)| *q == p)
            .map(|(_, s)| s)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::ClassAbsent(p.to_string()))?;
        for (source, s) in signals.iter().enumerate() {
            for _ in 0..cfg.k {
                let noisy: Vec<f64> = s.iter().map(|&x| x + noise.sample(rng)).collect();
                let r = rng.random_range(0..=cfg.r);
                out.push(AugmentedSignal {
                    values: roll_off(r, &noisy),
                    class,
                    source,
                });
            }
        }
    }
    Ok(out)
}

/// Merges per-ECU augmented sets so that copies of earlier recordings come
/// first; ties keep ECU order.
pub fn interleave_chronologically(per_ecu: Vec<Vec<AugmentedSignal>>) -> Vec<AugmentedSignal> {
    let mut tagged: Vec<(usize, usize, AugmentedSignal)> = per_ecu
        .into_iter()
        .enumerate()
        .flat_map(|(e, v)| v.into_iter().map(move |s| (s.source, e, s)))
        .collect();
    tagged.sort_by_key(|(src, e, _)| (*src, *e));
    tagged.into_iter().map(|(_, _, s)| s).collect()
}

/// VGG16-style stack for a `[1, feature_len]` input.
pub fn vgg1d_specs(classes: usize, width: f64, dense_units: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    for (convs, filters) in VGG_BLOCKS {
        let f = ((filters as f64 * width).round() as usize).max(1);
        for _ in 0..convs {
            specs.push(LayerSpec::Conv1d { filters: f, kernel: 3 });
            specs.push(LayerSpec::Activation(Activation::Relu));
        }
        specs.push(LayerSpec::MaxPool1d { size: 2 });
    }
    for _ in 0..2 {
        specs.push(LayerSpec::Dense { units: dense_units });
        specs.push(LayerSpec::Activation(Activation::Relu));
    }
    specs.push(LayerSpec::Dense { units: classes });
    specs.push(LayerSpec::Activation(Activation::Softmax));
    specs
}

#[derive(Debug, Clone)]
pub struct LocalizerConfig {
    pub width: f64,
    pub dense_units: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        Self {
            width: DEFAULT_WIDTH,
            dense_units: 256,
            epochs: 100,
            // At this learning rate larger batches leave too few updates
            // to converge within the epoch budget.
            batch_size: 2,
            learning_rate: 1e-5,
            validation_fraction: 0.3,
            patience: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalizerModel {
    cnn: Sequential,
    classes: Vec<TapPoint>,
}

impl LocalizerModel {
    pub fn from_parts(cnn: Sequential, classes: Vec<TapPoint>) -> Result<Self> {
        if cnn.output_shape() != [classes.len()] || cnn.input_shape().len() != 2 {
            return Err(Error::Model("classifier shape does not match the class list".into()));
        }
        Ok(Self { cnn, classes })
    }

    pub fn classes(&self) -> &[TapPoint] {
        &self.classes
    }

    pub fn feature_len(&self) -> usize {
        self.cnn.input_shape()[1]
    }

    pub fn cnn(&self) -> &Sequential {
        &self.cnn
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

    /// Class distribution of each signal.
    pub fn probabilities<S: AsRef<[f64]>>(&self, signals: &[S]) -> Result<Vec<Vec<f64>>> {
        for s in signals {
            self.check(s.as_ref().len())?;
        }
        Ok(self.cnn.predict(signals)?)
    }

    /// Per-signal argmax class, lowest index on ties.
    pub fn classify<S: AsRef<[f64]>>(&self, signals: &[S]) -> Result<Vec<TapPoint>> {
        Ok(self.probabilities(signals)?.iter().map(|p| self.classes[argmax(p)]).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut cnn = self.cnn.clone();
        cnn.metadata.insert(KIND_KEY.into(), KIND.into());
        let names: Vec<String> = self.classes.iter().map(|p| p.to_string()).collect();
        cnn.metadata.insert(CLASSES_KEY.into(), names.join(","));
        save_model(&cnn, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cnn = load_model(path)?;
        if cnn.metadata.get(KIND_KEY).map(String::as_str) != Some(KIND) {
            return Err(Error::Model(format!("{} is not a localizer model", path.display())));
        }
        let classes = cnn
            .metadata
            .get(CLASSES_KEY)
            .ok_or_else(|| Error::Model("class list missing".into()))?
            .split(',')
            .map(str::parse)
            .collect::<Result<Vec<TapPoint>>>()?;
        Self::from_parts(cnn, classes)
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Trains the classifier on augmented signals in acquisition order. The
/// validation tail is taken per class.
pub fn train_localizer(
    augmented: &[AugmentedSignal],
    classes: &[TapPoint],
    cfg: &LocalizerConfig,
) -> Result<(LocalizerModel, TrainHistory)> {
    let first = augmented.first().ok_or(Error::Empty("augmented training set"))?;
    let len = first.values.len();
    for (c, p) in classes.iter().enumerate() {
        if !augmented.iter().any(|s| s.class == c) {
            return Err(Error::ClassAbsent(p.to_string()));
        }
    }
    if let Some(bad) = augmented.iter().find(|s| s.values.len() != len) {
        return Err(Error::LengthMismatch {
            expected: len,
            actual: bad.values.len(),
        });
    }
    if let Some(bad) = augmented.iter().find(|s| s.class >= classes.len()) {
        return Err(Error::Config(format!("class index {} outside the point list", bad.class)));
    }
    let inputs = augmented.iter().map(|s| s.values.clone()).collect();
    let targets = augmented
        .iter()
        .map(|s| {
            let mut t = vec![0.0; classes.len()];
            t[s.class] = 1.0;
            t
        })
        .collect();
    let data = Dataset::new(inputs, targets)?.with_labels(augmented.iter().map(|s| s.class).collect())?;
    let (tr, val) = data.split(cfg.validation_fraction, SplitStrategy::PerClassChronological)?;
    let mut cnn = Sequential::from_specs(&[1, len], &vgg1d_specs(classes.len(), cfg.width, cfg.dense_units), cfg.seed)?;
    let tcfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        optimizer: "rmsprop".into(),
        loss: "cce".into(),
        loss_args: LossArgs::default(),
        validation_fraction: cfg.validation_fraction,
        split: SplitStrategy::PerClassChronological,
        patience: cfg.patience,
        seed: cfg.seed,
    };
    let history = train_with_validation(&mut cnn, &tr, &val, &tcfg)?;
    Ok((LocalizerModel::from_parts(cnn, classes.to_vec())?, history))
}

/// The most recent accepted signal of every roster ECU.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalizationInput {
    pub signals: Vec<(String, Vec<f64>)>,
}

impl LocalizationInput {
    pub fn validate(&self) -> Result<()> {
        if self.signals.is_empty() {
            return Err(Error::Empty("localization input"));
        }
        for (i, (label, _)) in self.signals.iter().enumerate() {
            if self.signals[..i].iter().any(|(l, _)| l == label) {
                return Err(Error::Config(format!("two signals from {label}")));
            }
        }
        Ok(())
    }
}

/// Candidates that occur most often, in first-appearance order.
pub fn modal_set<T: PartialEq + Copy>(candidates: &[T]) -> Vec<T> {
    let mut counts: Vec<(T, usize)> = Vec::new();
    for &c in candidates {
        match counts.iter_mut().find(|(v, _)| *v == c) {
            Some((_, n)) => *n += 1,
            None => counts.push((c, 1)),
        }
    }
    let top = counts.iter().map(|(_, n)| *n).max().unwrap_or(0);
    counts.into_iter().filter(|(_, n)| *n == top).map(|(v, _)| v).collect()
}

/// Mode of `candidates`; a tie is broken by a uniform draw from the tie set.
pub fn majority<T: PartialEq + Copy>(candidates: &[T], rng: &mut ChaCha8Rng) -> Option<T> {
    let modes = modal_set(candidates);
    match modes.len() {
        0 => None,
        1 => Some(modes[0]),
        n => Some(modes[rng.random_range(0..n)]),
    }
}

/// Votes the per-signal predictions into one insertion point.
pub fn locate_insertion_point(input: &LocalizationInput, model: &LocalizerModel, rng: &mut ChaCha8Rng) -> Result<TapPoint> {
    input.validate()?;
    let signals: Vec<&[f64]> = input.signals.iter().map(|(_, s)| s.as_slice()).collect();
    let candidates = model.classify(&signals)?;
    majority(&candidates, rng).ok_or(Error::Empty("localization input"))
}

//! Trainable models behind `train` and `eval`, looked up by name.

use std::collections::BTreeMap;
use std::path::Path;

use canloc_core::auth::{AuthBundle, AuthConfig};
use canloc_core::bussim::TapPoint;
use canloc_core::config::Settings;
use canloc_core::detector::{train_detector_with_history, DetectorConfig, DetectorModel};
use canloc_core::features::FeatureConfig;
use canloc_core::localizer::{train_localizer, AugmentationConfig, LocalizerConfig, LocalizerModel};
use canloc_core::metrics::MetricsReport;
use canloc_core::pipeline::{
    auth_config, chronological_split, clean_signals, detection_config, detection_confusion, localization_confusion,
    localization_groups, localizer_training_set, location_config, model_outcomes, train_auth_bundle, LabeledFeature,
};
use canloc_core::roster::EcuRoster;
use canloc_core::{Error, Result};
use canloc_neural::TrainHistory;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

/// Fraction of clean features held back to set the detection threshold.
const DETECTOR_VALIDATION: f64 = 0.3;
const AUGMENT_STREAM: u64 = 1;
const VOTE_STREAM: u64 = 2;

pub trait Task {
    fn name(&self) -> &'static str;
    /// Default feature view; `--channel` replaces its channel.
    fn features(&self) -> FeatureConfig;
    /// Trains, saves to `out` and returns a machine-readable summary.
    fn train(&self, data: &[LabeledFeature], s: &Settings, epochs: Option<usize>, out: &Path) -> Result<Value>;
    fn eval(&self, model: &Path, data: &[LabeledFeature], s: &Settings) -> Result<MetricsReport>;
}

fn history(h: &TrainHistory) -> Value {
    json!({
        "epochs_run": h.epochs_run(),
        "best_epoch": h.best_epoch,
        "train_loss": h.train_loss,
        "val_loss": h.val_loss,
    })
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

struct DetectorTask;

impl Task for DetectorTask {
    fn name(&self) -> &'static str {
        "detector"
    }

    fn features(&self) -> FeatureConfig {
        detection_config()
    }

    fn train(&self, data: &[LabeledFeature], s: &Settings, epochs: Option<usize>, out: &Path) -> Result<Value> {
        let clean = clean_signals(data)?;
        let (tr, val) = chronological_split(&clean, DETECTOR_VALIDATION);
        let mut cfg = DetectorConfig {
            seed: s.seed,
            ..DetectorConfig::default()
        };
        cfg.epochs = epochs.unwrap_or(cfg.epochs);
        let (model, h) = train_detector_with_history(&tr, &val, &cfg)?;
        model.save(out)?;
        Ok(json!({ "task": self.name(), "thr": model.thr(), "history": history(&h) }))
    }

    fn eval(&self, model: &Path, data: &[LabeledFeature], _s: &Settings) -> Result<MetricsReport> {
        let m = DetectorModel::load(model)?;
        Ok(MetricsReport::from_confusion(detection_confusion(&m, data)?))
    }
}

struct LocalizerTask;

impl Task for LocalizerTask {
    fn name(&self) -> &'static str {
        "localizer"
    }

    fn features(&self) -> FeatureConfig {
        location_config()
    }

    fn train(&self, data: &[LabeledFeature], s: &Settings, epochs: Option<usize>, out: &Path) -> Result<Value> {
        let aug = AugmentationConfig {
            k: s.k,
            r: s.r,
            ..AugmentationConfig::default()
        };
        let set = localizer_training_set(data, &EcuRoster::reference(), &aug, &mut rng(s.seed, AUGMENT_STREAM))?;
        let mut cfg = LocalizerConfig {
            seed: s.seed,
            ..LocalizerConfig::default()
        };
        cfg.epochs = epochs.unwrap_or(cfg.epochs);
        let (model, h) = train_localizer(&set, &TapPoint::INSERTION_POINTS, &cfg)?;
        model.save(out)?;
        Ok(json!({ "task": self.name(), "samples": set.len(), "history": history(&h) }))
    }

    fn eval(&self, model: &Path, data: &[LabeledFeature], s: &Settings) -> Result<MetricsReport> {
        let m = LocalizerModel::load(model)?;
        let groups = localization_groups(data, &EcuRoster::reference());
        if groups.is_empty() {
            return Err(Error::ClassAbsent("insertion network".into()));
        }
        Ok(MetricsReport::from_confusion(localization_confusion(&m, &groups, &mut rng(s.seed, VOTE_STREAM))?))
    }
}

struct AuthTask;

impl Task for AuthTask {
    fn name(&self) -> &'static str {
        "auth"
    }

    fn features(&self) -> FeatureConfig {
        auth_config()
    }

    fn train(&self, data: &[LabeledFeature], s: &Settings, epochs: Option<usize>, out: &Path) -> Result<Value> {
        let mut cfg = AuthConfig {
            seed: s.seed,
            ..AuthConfig::default()
        };
        cfg.epochs = epochs.unwrap_or(cfg.epochs);
        let roster = EcuRoster::reference();
        let (bundle, hs) = train_auth_bundle(data, &roster, &cfg)?;
        bundle.save(out)?;
        let per_ecu: Vec<Value> = roster
            .labels()
            .zip(&hs)
            .map(|(ecu, h)| json!({ "ecu": ecu, "history": history(h) }))
            .collect();
        Ok(json!({ "task": self.name(), "models": per_ecu }))
    }

    fn eval(&self, model: &Path, data: &[LabeledFeature], _s: &Settings) -> Result<MetricsReport> {
        let bundle = AuthBundle::load(model)?;
        let ecus: Vec<String> = bundle.roster().labels().map(str::to_string).collect();
        MetricsReport::from_auth(&ecus, &model_outcomes(&bundle, data)?)
    }
}

pub struct TaskRegistry {
    tasks: BTreeMap<&'static str, Box<dyn Task>>,
}

impl Default for TaskRegistry {
    fn default() -> Self {
        let mut r = Self { tasks: BTreeMap::new() };
        r.register(Box::new(DetectorTask));
        r.register(Box::new(LocalizerTask));
        r.register(Box::new(AuthTask));
        r
    }
}

impl TaskRegistry {
    pub fn register(&mut self, task: Box<dyn Task>) {
        self.tasks.insert(task.name(), task);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Task> {
        self.tasks.get(name).map(|t| t.as_ref()).ok_or_else(|| {
            let known: Vec<_> = self.tasks.keys().copied().collect();
            Error::Config(format!("unknown task `{name}` (known: {})", known.join(", ")))
        })
    }
}

//! Mini-batch training with a chronological validation split and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NeuralError, Result};
use crate::loss::{Loss, LossArgs, LossRegistry};
use crate::model::Sequential;
use crate::optim::OptimizerRegistry;
use crate::tensor::Tensor;

/// How the held-out validation tail is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitStrategy {
    /// The last fraction of the whole dataset, in order.
    #[default]
    Chronological,
    /// The last fraction of each class, in order. Requires labels.
    PerClassChronological,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: String,
    pub loss: String,
    pub loss_args: LossArgs,
    pub validation_fraction: f64,
    pub split: SplitStrategy,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: "adam".into(),
            loss: "mse".into(),
            loss_args: LossArgs::default(),
            validation_fraction: 0.3,
            split: SplitStrategy::Chronological,
            patience: 10,
            seed: 0,
        }
    }
}

/// Inputs, targets and optional class labels, in acquisition order.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(NeuralError::InvalidConfig(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Self {
            inputs,
            targets,
            labels: None,
        })
    }

    /// Autoencoder dataset: targets equal inputs.
    pub fn reconstruction(inputs: Vec<Vec<f64>>) -> Self {
        Self {
            targets: inputs.clone(),
            inputs,
            labels: None,
        }
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.inputs.len() {
            return Err(NeuralError::InvalidConfig("label count does not match inputs".into()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Splits off the validation tail according to `strategy`.
    pub fn split(&self, fraction: f64, strategy: SplitStrategy) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(NeuralError::InvalidConfig(format!(
                "validation fraction must be in [0, 1), got {fraction}"
            )));
        }
        let (train, val): (Vec<usize>, Vec<usize>) = match strategy {
            SplitStrategy::Chronological => {
                let n_val = (self.len() as f64 * fraction).round() as usize;
                let cut = self.len() - n_val;
                ((0..cut).collect(), (cut..self.len()).collect())
            }
            SplitStrategy::PerClassChronological => {
                let labels = self.labels.as_ref().ok_or_else(|| {
                    NeuralError::InvalidConfig("per-class split needs labels".into())
                })?;
                let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
                let mut train = Vec::new();
                let mut val = Vec::new();
                for c in 0..classes {
                    let members: Vec<usize> = (0..self.len()).filter(|&i| labels[i] == c).collect();
                    let n_val = (members.len() as f64 * fraction).round() as usize;
                    let cut = members.len() - n_val;
                    train.extend_from_slice(&members[..cut]);
                    val.extend_from_slice(&members[cut..]);
                }
                train.sort_unstable();
                val.sort_unstable();
                (train, val)
            }
        };
        Ok((self.subset(&train), self.subset(&val)))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }
}

/// Splits `data` per `cfg`, then trains with early stopping on the held-out part.
pub fn train(model: &mut Sequential, data: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    if data.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    let (tr, val) = data.split(cfg.validation_fraction, cfg.split)?;
    train_with_validation(model, &tr, &val, cfg)
}

/// Mean loss of `model` over `data`, evaluated in inference mode.
pub fn evaluate_loss(model: &Sequential, data: &Dataset, loss: &dyn Loss) -> Result<f64> {
    if data.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    let pred = model.predict(&data.inputs)?;
    let out_shape = model.output_shape();
    let p = Tensor::stack(&pred, &out_shape)?;
    let t = Tensor::stack(&data.targets, &out_shape)?;
    Ok(loss.per_example(&p, &t)?.iter().sum::<f64>() / data.len() as f64)
}

/// Trains on `train_set`; when `val_set` is non-empty, keeps the parameters
/// with the lowest validation loss and stops after `patience` stale epochs.
pub fn train_with_validation(
    model: &mut Sequential,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    if train_set.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(NeuralError::InvalidConfig("epochs and batch size must be positive".into()));
    }
    if train_set.len() < cfg.batch_size {
        return Err(NeuralError::DatasetTooSmall {
            len: train_set.len(),
            batch: cfg.batch_size,
        });
    }
    let loss = LossRegistry::default().create(&cfg.loss, &cfg.loss_args)?;
    let mut opt = OptimizerRegistry::default().create(&cfg.optimizer, cfg.learning_rate)?;
    let in_shape = model.input_shape().to_vec();
    let out_shape = model.output_shape();
    model.reseed(cfg.seed.wrapping_add(1));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut history = TrainHistory::default();
    let mut best = f64::INFINITY;
    let mut best_params = model.snapshot();
    let mut stale = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            // Batch statistics are undefined for a single example.
            if batch.len() < 2 {
                continue;
            }
            let xs: Vec<&[f64]> = batch.iter().map(|&i| train_set.inputs[i].as_slice()).collect();
            let ys: Vec<&[f64]> = batch.iter().map(|&i| train_set.targets[i].as_slice()).collect();
            let x = Tensor::stack(&xs, &in_shape)?;
            let y = Tensor::stack(&ys, &out_shape)?;
            model.zero_grad();
            let pred = model.forward(&x, true)?;
            let (l, grad) = loss.evaluate(&pred, &y)?;
            model.backward(&grad)?;
            opt.step(&mut model.params_mut());
            total += l * batch.len() as f64;
            seen += batch.len();
        }
        history.train_loss.push(total / seen.max(1) as f64);

        let monitored = if val_set.is_empty() {
            *history.train_loss.last().unwrap()
        } else {
            let v = evaluate_loss(model, val_set, loss.as_ref())?;
            history.val_loss.push(v);
            v
        };
        if !monitored.is_finite() {
            break;
        }
        if monitored < best {
            best = monitored;
            best_params = model.snapshot();
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if !val_set.is_empty() && stale >= cfg.patience {
                break;
            }
        }
    }
    model.restore(&best_params)?;
    Ok(history)
}

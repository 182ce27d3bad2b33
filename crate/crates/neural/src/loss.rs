//! Loss functions. All reduce by the mean over the batch.

use std::collections::BTreeMap;

use crate::error::{NeuralError, Result};
use crate::tensor::Tensor;

const PROB_FLOOR: f64 = 1e-12;

pub trait Loss: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns the batch loss and its gradient w.r.t. `pred`.
    fn evaluate(&self, pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)>;

    /// Per-example loss values (no batch reduction).
    fn per_example(&self, pred: &Tensor, target: &Tensor) -> Result<Vec<f64>>;
}

fn check(pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(NeuralError::ShapeMismatch {
            expected: pred.shape().to_vec(),
            actual: target.shape().to_vec(),
        });
    }
    Ok(())
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Mean squared error over every element.
#[derive(Debug, Clone, Copy, Default)]
pub struct Mse;

impl Loss for Mse {
    fn name(&self) -> &'static str {
        "mse"
    }

    fn evaluate(&self, pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
        check(pred, target)?;
        let n = pred.data().len() as f64;
        let mut loss = 0.0;
        let grad = pred
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| {
                let d = p - t;
                loss += d * d;
                2.0 * d / n
            })
            .collect();
        Ok((loss / n, Tensor::new(pred.shape().to_vec(), grad)?))
    }

    fn per_example(&self, pred: &Tensor, target: &Tensor) -> Result<Vec<f64>> {
        check(pred, target)?;
        let d = pred.sample_len();
        Ok(pred
            .data()
            .chunks(d)
            .zip(target.data().chunks(d))
            .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / d as f64)
            .collect())
    }
}

/// Binary cross-entropy on probabilities, optionally weighted per class.
///
/// With weights `(w0, w1)` each example's term is multiplied by the weight of
/// its target class (targets are rounded to 0/1 for the lookup).
#[derive(Debug, Clone)]
pub struct BinaryCrossEntropy {
    class_weights: Option<[f64; 2]>,
}

impl BinaryCrossEntropy {
    pub fn plain() -> Self {
        Self { class_weights: None }
    }

    pub fn weighted(w0: f64, w1: f64) -> Self {
        Self {
            class_weights: Some([w0, w1]),
        }
    }

    fn weight(&self, target: f64) -> f64 {
        match self.class_weights {
            Some(w) => w[usize::from(target >= 0.5)],
            None => 1.0,
        }
    }
}

impl Loss for BinaryCrossEntropy {
    fn name(&self) -> &'static str {
        if self.class_weights.is_some() {
            "weighted_bce"
        } else {
            "bce"
        }
    }

    fn evaluate(&self, pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
        check(pred, target)?;
        let d = pred.sample_len();
        let n = pred.data().len() as f64;
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(pred.data().len());
        for (prow, trow) in pred.data().chunks(d).zip(target.data().chunks(d)) {
            for (&p, &t) in prow.iter().zip(trow) {
                let w = self.weight(t);
                let q = clamp_prob(p);
                loss -= w * (t * q.ln() + (1.0 - t) * (1.0 - q).ln());
                grad.push(w * (q - t) / (q * (1.0 - q)) / n);
            }
        }
        Ok((loss / n, Tensor::new(pred.shape().to_vec(), grad)?))
    }

    fn per_example(&self, pred: &Tensor, target: &Tensor) -> Result<Vec<f64>> {
        check(pred, target)?;
        let d = pred.sample_len();
        Ok(pred
            .data()
            .chunks(d)
            .zip(target.data().chunks(d))
            .map(|(p, t)| {
                p.iter()
                    .zip(t)
                    .map(|(&p, &t)| {
                        let q = clamp_prob(p);
                        -self.weight(t) * (t * q.ln() + (1.0 - t) * (1.0 - q).ln())
                    })
                    .sum::<f64>()
                    / d as f64
            })
            .collect())
    }
}

/// Categorical cross-entropy on probability rows (one-hot or soft targets).
#[derive(Debug, Clone, Copy, Default)]
pub struct CategoricalCrossEntropy;

impl Loss for CategoricalCrossEntropy {
    fn name(&self) -> &'static str {
        "cce"
    }

    fn evaluate(&self, pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
        check(pred, target)?;
        let batch = pred.batch().max(1) as f64;
        let mut loss = 0.0;
        let grad = pred
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let q = clamp_prob(p);
                loss -= t * q.ln();
                -t / q / batch
            })
            .collect();
        Ok((loss / batch, Tensor::new(pred.shape().to_vec(), grad)?))
    }

    fn per_example(&self, pred: &Tensor, target: &Tensor) -> Result<Vec<f64>> {
        check(pred, target)?;
        let d = pred.sample_len();
        Ok(pred
            .data()
            .chunks(d)
            .zip(target.data().chunks(d))
            .map(|(p, t)| -p.iter().zip(t).map(|(&p, &t)| t * clamp_prob(p).ln()).sum::<f64>())
            .collect())
    }
}

/// Arguments available to loss constructors.
#[derive(Debug, Clone, Default)]
pub struct LossArgs {
    pub class_weights: Option<Vec<f64>>,
}

type LossCtor = fn(&LossArgs) -> Result<Box<dyn Loss>>;

/// Name → constructor table for losses (`mse`, `bce`, `weighted_bce`, `cce`).
pub struct LossRegistry {
    ctors: BTreeMap<&'static str, LossCtor>,
}

impl LossRegistry {
    pub fn empty() -> Self {
        Self { ctors: BTreeMap::new() }
    }

    pub fn register(&mut self, name: &'static str, ctor: LossCtor) {
        self.ctors.insert(name, ctor);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.ctors.keys().copied()
    }

    pub fn create(&self, name: &str, args: &LossArgs) -> Result<Box<dyn Loss>> {
        let ctor = self.ctors.get(name).ok_or_else(|| NeuralError::Unknown {
            kind: "loss",
            name: name.to_string(),
        })?;
        ctor(args)
    }
}

impl Default for LossRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("mse", |_| Ok(Box::new(Mse)));
        r.register("bce", |_| Ok(Box::new(BinaryCrossEntropy::plain())));
        r.register("weighted_bce", |args| match args.class_weights.as_deref() {
            None => Ok(Box::new(BinaryCrossEntropy::weighted(1.0, 1.0))),
            Some(&[w0, w1]) if w0 > 0.0 && w1 > 0.0 => Ok(Box::new(BinaryCrossEntropy::weighted(w0, w1))),
            Some(w) => Err(NeuralError::InvalidConfig(format!(
                "weighted_bce needs two positive class weights, got {w:?}"
            ))),
        });
        r.register("cce", |_| Ok(Box::new(CategoricalCrossEntropy)));
        r
    }
}

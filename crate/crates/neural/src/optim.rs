//! First-order optimizers with their standard update rules.

use std::collections::BTreeMap;

use crate::error::{NeuralError, Result};
use crate::layer::Param;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const RMSPROP_RHO: f64 = 0.9;
pub const RMSPROP_EPS: f64 = 1e-8;

/// Moment estimates of parameters whose gradient stays at zero (dead ReLU
/// units) decay geometrically into the subnormal range, where x86 arithmetic
/// is two orders of magnitude slower. Flushing them to zero changes no update:
/// a subnormal moment is far below the epsilon it is added to.
#[inline]
fn flush(x: f64) -> f64 {
    if x.abs() < f64::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

pub trait Optimizer: Send {
    fn name(&self) -> &'static str;

    /// Applies one update to every trainable parameter, in a stable order.
    fn step(&mut self, params: &mut [&mut Param]);
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, t: 0, m: Vec::new(), v: Vec::new() }
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, params: &mut [&mut Param]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            for (((x, &g), m), v) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = flush(ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g);
                *v = flush(ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g);
                let mhat = *m / c1;
                let vhat = *v / c2;
                *x -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// RMSProp: `v = rho v + (1 - rho) g^2`, `theta -= lr g / (sqrt(v) + eps)`.
#[derive(Debug, Clone)]
pub struct RmsProp {
    lr: f64,
    v: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(lr: f64) -> Self {
        Self { lr, v: Vec::new() }
    }
}

impl Optimizer for RmsProp {
    fn name(&self) -> &'static str {
        "rmsprop"
    }

    fn step(&mut self, params: &mut [&mut Param]) {
        if self.v.is_empty() {
            self.v = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        }
        for (p, v) in params.iter_mut().zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            for ((x, &g), v) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                *v = flush(RMSPROP_RHO * *v + (1.0 - RMSPROP_RHO) * g * g);
                *x -= self.lr * g / (v.sqrt() + RMSPROP_EPS);
            }
        }
    }
}

type OptimizerCtor = fn(f64) -> Box<dyn Optimizer>;

/// Name → constructor table for optimizers.
pub struct OptimizerRegistry {
    ctors: BTreeMap<&'static str, OptimizerCtor>,
}

impl OptimizerRegistry {
    pub fn empty() -> Self {
        Self { ctors: BTreeMap::new() }
    }

    pub fn register(&mut self, name: &'static str, ctor: OptimizerCtor) {
        self.ctors.insert(name, ctor);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.ctors.keys().copied()
    }

    pub fn create(&self, name: &str, learning_rate: f64) -> Result<Box<dyn Optimizer>> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(NeuralError::InvalidConfig(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let ctor = self.ctors.get(name).ok_or_else(|| NeuralError::Unknown {
            kind: "optimizer",
            name: name.to_string(),
        })?;
        Ok(ctor(learning_rate))
    }
}

impl Default for OptimizerRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("adam", |lr| Box::new(Adam::new(lr)));
        r.register("rmsprop", |lr| Box::new(RmsProp::new(lr)));
        r
    }
}

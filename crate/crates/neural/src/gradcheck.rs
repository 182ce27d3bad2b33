//! Central finite-difference gradient checks for layers and losses.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layer::{ForwardCtx, Layer};
use crate::loss::Loss;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;

/// Coordinates probed per tensor; larger tensors are subsampled.
const MAX_PROBES: usize = 64;

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

fn probes(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= MAX_PROBES {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, MAX_PROBES).into_vec();
        v.sort_unstable();
        v
    }
}

/// Scalar objective `sum(r * layer(x))` with a fixed dropout stream.
fn objective(layer: &mut dyn Layer, x: &Tensor, r: &[f64], seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = ForwardCtx {
        training: true,
        rng: &mut rng,
    };
    let y = layer.forward(x, &mut ctx)?;
    Ok(y.data().iter().zip(r).map(|(a, b)| a * b).sum())
}

/// Worst relative error between backprop and finite differences over the
/// input gradient and every trainable parameter of `layer`.
pub fn layer_gradient_error(layer: &mut dyn Layer, input: &Tensor, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dropout_seed = rng.random();
    let mut ctx_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let y = layer.forward(
        input,
        &mut ForwardCtx {
            training: true,
            rng: &mut ctx_rng,
        },
    )?;
    let r: Vec<f64> = (0..y.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    for p in layer.params_mut() {
        p.zero_grad();
    }
    let dx = layer.backward(&Tensor::new(y.shape().to_vec(), r.clone())?)?;
    let param_grads: Vec<Vec<f64>> = layer.params().iter().map(|p| p.grad.clone()).collect();

    let mut worst = 0.0f64;
    let idx = probes(input.data().len(), &mut rng);
    let mut numeric = Vec::with_capacity(idx.len());
    let mut x = input.clone();
    for &i in &idx {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + STEP;
        let fp = objective(layer, &x, &r, dropout_seed)?;
        x.data_mut()[i] = orig - STEP;
        let fm = objective(layer, &x, &r, dropout_seed)?;
        x.data_mut()[i] = orig;
        numeric.push((fp - fm) / (2.0 * STEP));
    }
    let analytic: Vec<f64> = idx.iter().map(|&i| dx.data()[i]).collect();
    worst = worst.max(relative_error(&analytic, &numeric));

    let n_params = layer.params().len();
    for (pi, grads) in param_grads.iter().enumerate().take(n_params) {
        if !layer.params()[pi].trainable {
            continue;
        }
        let idx = probes(grads.len(), &mut rng);
        let mut numeric = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = layer.params()[pi].value[i];
            layer.params_mut()[pi].value[i] = orig + STEP;
            let fp = objective(layer, input, &r, dropout_seed)?;
            layer.params_mut()[pi].value[i] = orig - STEP;
            let fm = objective(layer, input, &r, dropout_seed)?;
            layer.params_mut()[pi].value[i] = orig;
            numeric.push((fp - fm) / (2.0 * STEP));
        }
        let analytic: Vec<f64> = idx.iter().map(|&i| grads[i]).collect();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Relative error of a loss gradient w.r.t. its prediction argument.
pub fn loss_gradient_error(loss: &dyn Loss, pred: &Tensor, target: &Tensor) -> Result<f64> {
    let (_, grad) = loss.evaluate(pred, target)?;
    let mut p = pred.clone();
    let mut numeric = Vec::with_capacity(p.data().len());
    for i in 0..p.data().len() {
        let orig = p.data()[i];
        p.data_mut()[i] = orig + STEP;
        let fp = loss.evaluate(&p, target)?.0;
        p.data_mut()[i] = orig - STEP;
        let fm = loss.evaluate(&p, target)?.0;
        p.data_mut()[i] = orig;
        numeric.push((fp - fm) / (2.0 * STEP));
    }
    Ok(relative_error(grad.data(), &numeric))
}

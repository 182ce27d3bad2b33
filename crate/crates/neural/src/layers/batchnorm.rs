use crate::error::{NeuralError, Result};
use crate::layer::{ForwardCtx, Layer, LayerKind, Param};
use crate::tensor::Tensor;

pub(crate) const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

/// Batch normalisation over features (`[N, F]`, rank 1) or channels
/// (`[N, C, L]`, rank 2). Inference uses the running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    features: usize,
    rank: usize,
    gamma: Param,
    beta: Param,
    running_mean: Param,
    running_var: Param,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
}

impl BatchNorm {
    pub fn new(features: usize, rank: usize) -> Result<Self> {
        if features == 0 || !(1..=2).contains(&rank) {
            return Err(NeuralError::InvalidLayer(format!(
                "batchnorm needs features >= 1 and rank 1 or 2 (got {features}, {rank})"
            )));
        }
        Ok(Self {
            features,
            rank,
            gamma: Param::new("gamma", vec![features], vec![1.0; features]),
            beta: Param::new("beta", vec![features], vec![0.0; features]),
            running_mean: Param::buffer("running_mean", vec![features], vec![0.0; features]),
            running_var: Param::buffer("running_var", vec![features], vec![1.0; features]),
            cache: None,
        })
    }

    /// (batch, length) with the feature axis validated.
    fn dims(&self, input: &Tensor) -> Result<(usize, usize)> {
        match (self.rank, input.shape()) {
            (1, [n, f]) if *f == self.features => Ok((*n, 1)),
            (2, [n, c, l]) if *c == self.features => Ok((*n, *l)),
            (_, other) => Err(NeuralError::ShapeMismatch {
                expected: vec![self.features],
                actual: other.get(1..).unwrap_or(&[]).to_vec(),
            }),
        }
    }

    /// Index of every value of feature `f` in a `[n, features, len]` buffer.
    fn indices(&self, n: usize, len: usize, f: usize) -> impl Iterator<Item = usize> {
        let features = self.features;
        (0..n).flat_map(move |s| {
            let base = (s * features + f) * len;
            base..base + len
        })
    }
}

impl Layer for BatchNorm {
    fn kind(&self) -> LayerKind {
        LayerKind::BatchNorm
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() == self.rank && input[0] == self.features {
            Ok(input.to_vec())
        } else {
            Err(NeuralError::ShapeMismatch {
                expected: vec![self.features],
                actual: input.to_vec(),
            })
        }
    }

    fn forward(&mut self, input: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        if !ctx.training {
            self.cache = None;
            return self.infer(input);
        }
        let (n, len) = self.dims(input)?;
        let m = (n * len) as f64;
        let x = input.data();
        let mut out = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; self.features];
        for f in 0..self.features {
            let mean = self.indices(n, len, f).map(|i| x[i]).sum::<f64>() / m;
            let var = self.indices(n, len, f).map(|i| (x[i] - mean).powi(2)).sum::<f64>() / m;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std[f] = is;
            for i in self.indices(n, len, f) {
                xhat[i] = (x[i] - mean) * is;
                out[i] = self.gamma.value[f] * xhat[i] + self.beta.value[f];
            }
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            self.running_mean.value[f] = (1.0 - MOMENTUM) * self.running_mean.value[f] + MOMENTUM * mean;
            self.running_var.value[f] = (1.0 - MOMENTUM) * self.running_var.value[f] + MOMENTUM * unbiased;
        }
        self.cache = Some(Cache {
            xhat,
            inv_std,
            shape: input.shape().to_vec(),
        });
        Tensor::new(input.shape().to_vec(), out)
    }

    fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let (n, len) = self.dims(input)?;
        let x = input.data();
        let mut out = vec![0.0; x.len()];
        for f in 0..self.features {
            let is = 1.0 / (self.running_var.value[f] + EPS).sqrt();
            let scale = self.gamma.value[f] * is;
            let shift = self.beta.value[f] - self.running_mean.value[f] * scale;
            for i in self.indices(n, len, f) {
                out[i] = x[i] * scale + shift;
            }
        }
        Tensor::new(input.shape().to_vec(), out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(NeuralError::NoForwardCache)?;
        let n = cache.shape[0];
        let len = if self.rank == 2 { cache.shape[2] } else { 1 };
        let m = (n * len) as f64;
        let g = grad_output.data();
        let mut dx = vec![0.0; g.len()];
        for f in 0..self.features {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for i in self.indices(n, len, f) {
                sum_g += g[i];
                sum_gx += g[i] * cache.xhat[i];
            }
            self.beta.grad[f] += sum_g;
            self.gamma.grad[f] += sum_gx;
            let k = self.gamma.value[f] * cache.inv_std[f] / m;
            for i in self.indices(n, len, f) {
                dx[i] = k * (m * g[i] - sum_g - cache.xhat[i] * sum_gx);
            }
        }
        Tensor::new(cache.shape.clone(), dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }

    fn hyper(&self) -> Vec<f64> {
        vec![self.features as f64, self.rank as f64]
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(Self {
            cache: None,
            ..self.clone()
        })
    }
}

use rand_chacha::ChaCha8Rng;

use crate::error::{NeuralError, Result};
use crate::gemm::{dot, gemm, View};
use crate::layer::{ForwardCtx, Layer, LayerKind, Param};
use crate::tensor::Tensor;

/// Batches up to this size skip GEMM packing and use row dot products.
const GEMV_BATCH: usize = 8;

/// Fully connected layer. Any per-sample input shape is flattened.
#[derive(Debug, Clone)]
pub struct Dense {
    inputs: usize,
    units: usize,
    weight: Param,
    bias: Param,
    cache: Option<Tensor>,
}

impl Dense {
    pub fn new(inputs: usize, units: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if inputs == 0 || units == 0 {
            return Err(NeuralError::InvalidLayer("dense sizes must be positive".into()));
        }
        Ok(Self {
            inputs,
            units,
            weight: Param::he_uniform("weight", vec![units, inputs], inputs, rng),
            bias: Param::new("bias", vec![units], vec![0.0; units]),
            cache: None,
        })
    }

    pub fn units(&self) -> usize {
        self.units
    }

    fn check(&self, input: &Tensor) -> Result<()> {
        if input.sample_len() != self.inputs {
            return Err(NeuralError::ShapeMismatch {
                expected: vec![self.inputs],
                actual: input.sample_shape().to_vec(),
            });
        }
        Ok(())
    }
}

impl Dense {
    /// One pass over the weight rows for both dW and dX.
    fn backward_small(&mut self, input: &Tensor, g: &[f64]) -> Result<Tensor> {
        let n = input.batch();
        let xs = input.data();
        let mut dx = vec![0.0; n * self.inputs];
        let rows = self.weight.value.chunks(self.inputs).zip(self.weight.grad.chunks_mut(self.inputs));
        for (u, (w, dw)) in rows.enumerate() {
            for s in 0..n {
                let gu = g[s * self.units + u];
                if gu == 0.0 {
                    continue;
                }
                self.bias.grad[u] += gu;
                let x = &xs[s * self.inputs..(s + 1) * self.inputs];
                for (d, &xv) in dw.iter_mut().zip(x) {
                    *d += gu * xv;
                }
                for (d, &wv) in dx[s * self.inputs..(s + 1) * self.inputs].iter_mut().zip(w) {
                    *d += gu * wv;
                }
            }
        }
        Tensor::new(input.shape().to_vec(), dx)
    }
}

impl Layer for Dense {
    fn kind(&self) -> LayerKind {
        LayerKind::Dense
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let n: usize = input.iter().product();
        if n != self.inputs {
            return Err(NeuralError::ShapeMismatch {
                expected: vec![self.inputs],
                actual: input.to_vec(),
            });
        }
        Ok(vec![self.units])
    }

    fn forward(&mut self, input: &Tensor, _ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let out = self.infer(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    fn infer(&self, input: &Tensor) -> Result<Tensor> {
        self.check(input)?;
        let n = input.batch();
        let mut out = vec![0.0; n * self.units];
        if n <= GEMV_BATCH {
            // Weight rows outermost so the matrix streams through cache once.
            let xs = input.data();
            for (u, (w, b)) in self.weight.value.chunks(self.inputs).zip(&self.bias.value).enumerate() {
                for (s, x) in xs.chunks(self.inputs).enumerate() {
                    out[s * self.units + u] = b + dot(x, w);
                }
            }
            return Tensor::new(vec![n, self.units], out);
        }
        for row in out.chunks_mut(self.units) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(
            n,
            self.inputs,
            self.units,
            1.0,
            View::row_major(input.data(), self.inputs),
            View::transposed(&self.weight.value, self.inputs),
            1.0,
            &mut out,
            0,
            self.units,
            1,
        );
        Tensor::new(vec![n, self.units], out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let g = grad_output.data();
        if self.cache.as_ref().is_some_and(|c| c.batch() <= GEMV_BATCH) {
            let input = self.cache.take().ok_or(NeuralError::NoForwardCache)?;
            let dx = self.backward_small(&input, g);
            self.cache = Some(input);
            return dx;
        }
        let input = self.cache.as_ref().ok_or(NeuralError::NoForwardCache)?;
        let n = input.batch();
        // dW (units x inputs) += dY^T (units x n) * X (n x inputs)
        gemm(
            self.units,
            n,
            self.inputs,
            1.0,
            View::transposed(g, self.units),
            View::row_major(input.data(), self.inputs),
            1.0,
            &mut self.weight.grad,
            0,
            self.inputs,
            1,
        );
        for row in g.chunks(self.units) {
            for (b, v) in self.bias.grad.iter_mut().zip(row) {
                *b += v;
            }
        }
        let mut dx = vec![0.0; n * self.inputs];
        gemm(
            n,
            self.units,
            self.inputs,
            1.0,
            View::row_major(g, self.units),
            View::row_major(&self.weight.value, self.inputs),
            0.0,
            &mut dx,
            0,
            self.inputs,
            1,
        );
        Tensor::new(input.shape().to_vec(), dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn hyper(&self) -> Vec<f64> {
        vec![self.inputs as f64, self.units as f64]
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(Self {
            cache: None,
            ..self.clone()
        })
    }
}

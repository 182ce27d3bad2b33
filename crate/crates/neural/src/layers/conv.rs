use rand_chacha::ChaCha8Rng;

use crate::error::{NeuralError, Result};
use crate::gemm::{gemm, View};
use crate::layer::{ForwardCtx, Layer, LayerKind, Param};
use crate::tensor::Tensor;

/// 1-D convolution, stride 1, zero "same" padding. Input `[N, C_in, L]`.
///
/// Weights are stored `[C_out, C_in, K]`; each kernel tap is applied as one
/// strided GEMM against a padded copy of the input.
#[derive(Debug, Clone)]
pub struct Conv1d {
    in_channels: usize,
    filters: usize,
    kernel: usize,
    weight: Param,
    bias: Param,
    cache: Option<(Vec<f64>, Vec<usize>)>,
}

impl Conv1d {
    pub fn new(in_channels: usize, filters: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if in_channels == 0 || filters == 0 || kernel == 0 {
            return Err(NeuralError::InvalidLayer(
                "conv1d channels, filters and kernel size must be >= 1".into(),
            ));
        }
        let fan_in = in_channels * kernel;
        Ok(Self {
            in_channels,
            filters,
            kernel,
            weight: Param::he_uniform("weight", vec![filters, in_channels, kernel], fan_in, rng),
            bias: Param::new("bias", vec![filters], vec![0.0; filters]),
            cache: None,
        })
    }

    fn pad_left(&self) -> usize {
        (self.kernel - 1) / 2
    }

    fn dims(&self, input: &Tensor) -> Result<(usize, usize)> {
        match input.shape() {
            [n, c, l] if *c == self.in_channels => Ok((*n, *l)),
            other => Err(NeuralError::ShapeMismatch {
                expected: vec![self.in_channels, 0],
                actual: other.get(1..).unwrap_or(&[]).to_vec(),
            }),
        }
    }

    /// Channel-major zero-padded copy `[C_in, N * (L + K - 1)]`.
    fn pad(&self, input: &Tensor, n: usize, len: usize) -> Vec<f64> {
        let plen = len + self.kernel - 1;
        let left = self.pad_left();
        let cin = self.in_channels;
        let mut out = vec![0.0; cin * n * plen];
        for (i, src) in input.data().chunks(len).enumerate() {
            let (s, c) = (i / cin, i % cin);
            let at = c * n * plen + s * plen + left;
            out[at..at + len].copy_from_slice(src);
        }
        out
    }

    /// Columns of the batch-wide product; the last `K - 1` columns of each
    /// sample straddle a boundary and are discarded.
    fn span(&self, n: usize, plen: usize) -> usize {
        n * plen - (self.kernel - 1)
    }

    fn conv(&self, padded: &[f64], n: usize, len: usize) -> Vec<f64> {
        let plen = len + self.kernel - 1;
        let (cin, cout, k) = (self.in_channels, self.filters, self.kernel);
        let cols = self.span(n, plen);
        let mut wide = vec![0.0; cout * cols];
        for tap in 0..k {
            // W_tap (cout x cin): element (o, c) at o*cin*k + c*k + tap
            let w = View { data: &self.weight.value, offset: tap, rs: cin * k, cs: k };
            let x = View { data: padded, offset: tap, rs: n * plen, cs: 1 };
            gemm(cout, cin, cols, 1.0, w, x, 1.0, &mut wide, 0, cols, 1);
        }
        let mut out = vec![0.0; n * cout * len];
        for (i, dst) in out.chunks_mut(len).enumerate() {
            let (s, o) = (i / cout, i % cout);
            let src = &wide[o * cols + s * plen..o * cols + s * plen + len];
            let b = self.bias.value[o];
            for (d, v) in dst.iter_mut().zip(src) {
                *d = v + b;
            }
        }
        out
    }
}

impl Layer for Conv1d {
    fn kind(&self) -> LayerKind {
        LayerKind::Conv1d
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input {
            [c, l] if *c == self.in_channels => Ok(vec![self.filters, *l]),
            _ => Err(NeuralError::ShapeMismatch {
                expected: vec![self.in_channels, 0],
                actual: input.to_vec(),
            }),
        }
    }

    fn forward(&mut self, input: &Tensor, _ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let (n, len) = self.dims(input)?;
        let padded = self.pad(input, n, len);
        let out = self.conv(&padded, n, len);
        self.cache = Some((padded, input.shape().to_vec()));
        Tensor::new(vec![n, self.filters, len], out)
    }

    fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let (n, len) = self.dims(input)?;
        let padded = self.pad(input, n, len);
        Tensor::new(vec![n, self.filters, len], self.conv(&padded, n, len))
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let (padded, shape) = self.cache.as_ref().ok_or(NeuralError::NoForwardCache)?;
        let (n, len) = (shape[0], shape[2]);
        let plen = len + self.kernel - 1;
        let (cin, cout, k) = (self.in_channels, self.filters, self.kernel);
        let cols = self.span(n, plen);
        if grad_output.data().len() != n * cout * len {
            return Err(NeuralError::ShapeMismatch {
                expected: vec![n, cout, len],
                actual: grad_output.shape().to_vec(),
            });
        }
        // dY laid out like the forward product, zero in the discarded columns.
        let mut wide = vec![0.0; cout * cols];
        for (i, src) in grad_output.data().chunks(len).enumerate() {
            let (s, o) = (i / cout, i % cout);
            self.bias.grad[o] += src.iter().sum::<f64>();
            wide[o * cols + s * plen..o * cols + s * plen + len].copy_from_slice(src);
        }
        let dy = View::row_major(&wide, cols);
        let mut dpadded = vec![0.0; cin * n * plen];
        for tap in 0..k {
            // dW_tap (cout x cin) += dY (cout x cols) * X_tap^T (cols x cin)
            let xt = View { data: padded, offset: tap, rs: 1, cs: n * plen };
            gemm(cout, cols, cin, 1.0, dy, xt, 1.0, &mut self.weight.grad, tap, cin * k, k);
            // dX_tap (cin x cols) += W_tap^T (cin x cout) * dY (cout x cols)
            let wt = View { data: &self.weight.value, offset: tap, rs: k, cs: cin * k };
            gemm(cin, cout, cols, 1.0, wt, dy, 1.0, &mut dpadded, tap, n * plen, 1);
        }
        let left = self.pad_left();
        let mut dx = vec![0.0; n * cin * len];
        for (i, dst) in dx.chunks_mut(len).enumerate() {
            let (s, c) = (i / cin, i % cin);
            let at = c * n * plen + s * plen + left;
            dst.copy_from_slice(&dpadded[at..at + len]);
        }
        Tensor::new(shape.clone(), dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn hyper(&self) -> Vec<f64> {
        vec![self.in_channels as f64, self.filters as f64, self.kernel as f64]
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(Self {
            cache: None,
            ..self.clone()
        })
    }
}

use crate::error::{NeuralError, Result};
use crate::layer::{ForwardCtx, Layer, LayerKind};
use crate::tensor::Tensor;

/// Max pooling over the length axis with stride equal to the window size.
/// Trailing samples that do not fill a window are dropped.
#[derive(Debug, Clone)]
pub struct MaxPool1d {
    size: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool1d {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(NeuralError::InvalidLayer("pool size must be >= 1".into()));
        }
        Ok(Self { size, cache: None })
    }

    fn pool(&self, input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let (n, c, len) = match input.shape() {
            [n, c, l] => (*n, *c, *l),
            other => {
                return Err(NeuralError::ShapeMismatch {
                    expected: vec![0, 0],
                    actual: other.get(1..).unwrap_or(&[]).to_vec(),
                })
            }
        };
        let out_len = len / self.size;
        let mut out = Vec::with_capacity(n * c * out_len);
        let mut argmax = Vec::with_capacity(n * c * out_len);
        for (row_idx, row) in input.data().chunks(len.max(1)).enumerate().take(n * c) {
            for w in 0..out_len {
                let start = w * self.size;
                let mut best = start;
                for i in start + 1..start + self.size {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                out.push(row[best]);
                argmax.push(row_idx * len + best);
            }
        }
        Ok((Tensor::new(vec![n, c, out_len], out)?, argmax))
    }
}

impl Layer for MaxPool1d {
    fn kind(&self) -> LayerKind {
        LayerKind::MaxPool1d
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input {
            [c, l] if *l >= self.size => Ok(vec![*c, l / self.size]),
            _ => Err(NeuralError::ShapeMismatch {
                expected: vec![0, self.size],
                actual: input.to_vec(),
            }),
        }
    }

    fn forward(&mut self, input: &Tensor, _ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let (out, argmax) = self.pool(input)?;
        self.cache = Some((argmax, input.shape().to_vec()));
        Ok(out)
    }

    fn infer(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.pool(input)?.0)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let (argmax, shape) = self.cache.as_ref().ok_or(NeuralError::NoForwardCache)?;
        let mut dx = Tensor::zeros(shape.clone());
        let d = dx.data_mut();
        for (&i, &g) in argmax.iter().zip(grad_output.data()) {
            d[i] += g;
        }
        Ok(dx)
    }

    fn hyper(&self) -> Vec<f64> {
        vec![self.size as f64]
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(Self::new(self.size).expect("validated at construction"))
    }
}

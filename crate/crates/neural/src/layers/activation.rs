use crate::error::{NeuralError, Result};
use crate::layer::{ForwardCtx, Layer, LayerKind};
use crate::tensor::Tensor;

pub const LEAKY_RELU_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Sigmoid,
    /// Normalises over every value of a sample.
    Softmax,
    Linear,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Self::Relu => 0,
            Self::LeakyRelu => 1,
            Self::Sigmoid => 2,
            Self::Softmax => 3,
            Self::Linear => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Self::Relu,
            1 => Self::LeakyRelu,
            2 => Self::Sigmoid,
            3 => Self::Softmax,
            4 => Self::Linear,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::LeakyRelu => "leaky_relu",
            Self::Sigmoid => "sigmoid",
            Self::Softmax => "softmax",
            Self::Linear => "linear",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [Self::Relu, Self::LeakyRelu, Self::Sigmoid, Self::Softmax, Self::Linear]
            .into_iter()
            .find(|a| a.name() == name)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[derive(Debug, Clone)]
pub struct ActivationLayer {
    activation: Activation,
    // Input for piecewise activations, output for sigmoid/softmax.
    cache: Option<Tensor>,
}

impl ActivationLayer {
    pub fn new(activation: Activation) -> Self {
        Self { activation, cache: None }
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn apply(&self, input: &Tensor) -> Result<Tensor> {
        let mut out = input.clone();
        match self.activation {
            Activation::Relu => out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::LeakyRelu => out.data_mut().iter_mut().for_each(|v| {
                if *v < 0.0 {
                    *v *= LEAKY_RELU_SLOPE
                }
            }),
            Activation::Sigmoid => out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Softmax => {
                let n = input.sample_len();
                if n == 0 {
                    return Err(NeuralError::InvalidLayer("softmax over an empty sample".into()));
                }
                out.data_mut().chunks_mut(n).for_each(softmax_in_place);
            }
            Activation::Linear => {}
        }
        Ok(out)
    }
}

impl Layer for ActivationLayer {
    fn kind(&self) -> LayerKind {
        LayerKind::Activation
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }

    fn forward(&mut self, input: &Tensor, _ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let out = self.apply(input)?;
        self.cache = Some(match self.activation {
            Activation::Sigmoid | Activation::Softmax => out.clone(),
            _ => input.clone(),
        });
        Ok(out)
    }

    fn infer(&self, input: &Tensor) -> Result<Tensor> {
        self.apply(input)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let cached = self.cache.as_ref().ok_or(NeuralError::NoForwardCache)?;
        let g = grad_output.data();
        let c = cached.data();
        let dx: Vec<f64> = match self.activation {
            Activation::Relu => g.iter().zip(c).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect(),
            Activation::LeakyRelu => g
                .iter()
                .zip(c)
                .map(|(g, x)| if *x > 0.0 { *g } else { g * LEAKY_RELU_SLOPE })
                .collect(),
            Activation::Sigmoid => g.iter().zip(c).map(|(g, y)| g * y * (1.0 - y)).collect(),
            Activation::Softmax => {
                let n = cached.sample_len();
                let mut dx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(n).zip(c.chunks(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    dx.extend(gr.iter().zip(yr).map(|(gi, yi)| yi * (gi - dot)));
                }
                dx
            }
            Activation::Linear => g.to_vec(),
        };
        Tensor::new(grad_output.shape().to_vec(), dx)
    }

    fn hyper(&self) -> Vec<f64> {
        vec![self.activation.code() as f64]
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(Self::new(self.activation))
    }
}

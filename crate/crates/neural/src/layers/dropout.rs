use rand::Rng;

use crate::error::{NeuralError, Result};
use crate::layer::{ForwardCtx, Layer, LayerKind};
use crate::tensor::Tensor;

/// Inverted dropout: active only in training, identity at inference.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NeuralError::InvalidLayer(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self { rate, mask: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl Layer for Dropout {
    fn kind(&self) -> LayerKind {
        LayerKind::Dropout
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }

    fn forward(&mut self, input: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        if !ctx.training || self.rate == 0.0 {
            self.mask = Some(vec![1.0; input.data().len()]);
            return Ok(input.clone());
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..input.data().len())
            .map(|_| if ctx.rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        let out = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        self.mask = Some(mask);
        Tensor::new(input.shape().to_vec(), out)
    }

    fn infer(&self, input: &Tensor) -> Result<Tensor> {
        Ok(input.clone())
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let mask = self.mask.as_ref().ok_or(NeuralError::NoForwardCache)?;
        let dx = grad_output.data().iter().zip(mask).map(|(g, m)| g * m).collect();
        Tensor::new(grad_output.shape().to_vec(), dx)
    }

    fn hyper(&self) -> Vec<f64> {
        vec![self.rate]
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(Self {
            rate: self.rate,
            mask: None,
        })
    }
}

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NeuralError, Result};
use crate::layer::{ForwardCtx, Layer, LayerRegistry, LayerSpec, Param};
use crate::tensor::Tensor;

/// Rows per chunk when running inference over many samples.
const INFER_CHUNK: usize = 8;

/// A feed-forward stack of layers with a fixed per-sample input shape.
///
/// `metadata` carries free-form key/value strings that travel with the model
/// when it is saved.
#[derive(Debug, Clone)]
pub struct Sequential {
    input_shape: Vec<usize>,
    layers: Vec<Box<dyn Layer>>,
    rng: ChaCha8Rng,
    pub metadata: BTreeMap<String, String>,
}

impl Sequential {
    /// Builds a model from layer specs, initialising weights from `seed`.
    pub fn from_specs(input_shape: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        Self::from_specs_with(&LayerRegistry::default(), input_shape, specs, seed)
    }

    pub fn from_specs_with(
        registry: &LayerRegistry,
        input_shape: &[usize],
        specs: &[LayerSpec],
        seed: u64,
    ) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(NeuralError::InvalidLayer(format!("bad input shape {input_shape:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let layer = registry.build_spec(spec, &shape, &mut rng)?;
            shape = layer.output_shape(&shape)?;
            layers.push(layer);
        }
        Self::from_layers(input_shape.to_vec(), layers, seed)
    }

    /// Assembles pre-built layers, checking that their shapes chain.
    pub fn from_layers(input_shape: Vec<usize>, layers: Vec<Box<dyn Layer>>, seed: u64) -> Result<Self> {
        let mut shape = input_shape.clone();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
        }
        Ok(Self {
            input_shape,
            layers,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xD0D0_D0D0),
            metadata: BTreeMap::new(),
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            shape = layer.output_shape(&shape).expect("shapes validated at construction");
        }
        shape
    }

    pub fn layers(&self) -> &[Box<dyn Layer>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer>] {
        &mut self.layers
    }

    /// Reseeds the stream used by dropout masks.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape().len() != self.input_shape.len() + 1 || input.sample_shape() != self.input_shape.as_slice() {
            return Err(NeuralError::ShapeMismatch {
                expected: self.input_shape.clone(),
                actual: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Forward pass that caches activations for `backward`.
    pub fn forward(&mut self, input: &Tensor, training: bool) -> Result<Tensor> {
        self.check_input(input)?;
        let mut ctx = ForwardCtx {
            training,
            rng: &mut self.rng,
        };
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x, &mut ctx)?;
        }
        Ok(x)
    }

    /// Read-only inference pass.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut layers = self.layers.iter();
        let Some(first) = layers.next() else {
            return Ok(input.clone());
        };
        let mut x = first.infer(input)?;
        for layer in layers {
            x = layer.infer(&x)?;
        }
        Ok(x)
    }

    /// Inference on a single flat sample.
    pub fn infer_one(&self, sample: &[f64]) -> Result<Vec<f64>> {
        let t = Tensor::stack(&[sample], &self.input_shape)?;
        Ok(self.infer(&t)?.into_data())
    }

    /// Inference over many samples, chunked to bound memory.
    pub fn predict<S: AsRef<[f64]>>(&self, samples: &[S]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(INFER_CHUNK) {
            let t = Tensor::stack(chunk, &self.input_shape)?;
            out.extend(self.infer(&t)?.to_rows());
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let mut g = grad_output.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.params().iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// Copies every parameter and buffer value (used for best-epoch restore).
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != snapshot.len() {
            return Err(NeuralError::Format("snapshot does not match model".into()));
        }
        for (p, v) in params.iter_mut().zip(snapshot) {
            if p.value.len() != v.len() {
                return Err(NeuralError::Format(format!("snapshot size mismatch for {}", p.name)));
            }
            p.value.copy_from_slice(v);
        }
        Ok(())
    }
}

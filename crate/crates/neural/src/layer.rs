use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NeuralError, Result};
use crate::layers::{Activation, ActivationLayer, BatchNorm, Conv1d, Dense, Dropout, MaxPool1d};
use crate::tensor::Tensor;

/// A named parameter (or non-trainable buffer) with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: &'static str, shape: Vec<usize>, value: Vec<f64>) -> Self {
        let n = value.len();
        debug_assert_eq!(n, shape.iter().product::<usize>());
        Self {
            name,
            shape,
            value,
            grad: vec![0.0; n],
            trainable: true,
        }
    }

    pub fn buffer(name: &'static str, shape: Vec<usize>, value: Vec<f64>) -> Self {
        Self {
            trainable: false,
            ..Self::new(name, shape, value)
        }
    }

    /// He-style uniform initialisation: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
    pub fn he_uniform(name: &'static str, shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let value = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
        Self::new(name, shape, value)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Per-call forward state: the training flag and the dropout random stream.
pub struct ForwardCtx<'a> {
    pub training: bool,
    pub rng: &'a mut ChaCha8Rng,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[repr(u8)]
pub enum LayerKind {
    Dense = 1,
    Conv1d = 2,
    MaxPool1d = 3,
    BatchNorm = 4,
    Dropout = 5,
    Activation = 6,
}

impl LayerKind {
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => Self::Dense,
            2 => Self::Conv1d,
            3 => Self::MaxPool1d,
            4 => Self::BatchNorm,
            5 => Self::Dropout,
            6 => Self::Activation,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Dense => "dense",
            Self::Conv1d => "conv1d",
            Self::MaxPool1d => "maxpool1d",
            Self::BatchNorm => "batchnorm",
            Self::Dropout => "dropout",
            Self::Activation => "activation",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One differentiable stage of a [`crate::Sequential`] model.
///
/// `forward` caches whatever `backward` needs; `infer` is the read-only path
/// used by trained, shared models.
pub trait Layer: Send + Sync + fmt::Debug {
    fn kind(&self) -> LayerKind;

    /// Per-sample output shape for a per-sample input shape.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>>;

    fn forward(&mut self, input: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor>;

    fn infer(&self, input: &Tensor) -> Result<Tensor>;

    /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor>;

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    /// Scalar hyper-parameters that, together with the kind tag, rebuild the layer.
    fn hyper(&self) -> Vec<f64>;

    fn clone_box(&self) -> Box<dyn Layer>;
}

impl Clone for Box<dyn Layer> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Declarative layer description; resolved against a per-sample input shape.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense { units: usize },
    Conv1d { filters: usize, kernel: usize },
    MaxPool1d { size: usize },
    BatchNorm,
    Dropout { rate: f64 },
    Activation(Activation),
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            Self::Dense { .. } => LayerKind::Dense,
            Self::Conv1d { .. } => LayerKind::Conv1d,
            Self::MaxPool1d { .. } => LayerKind::MaxPool1d,
            Self::BatchNorm => LayerKind::BatchNorm,
            Self::Dropout { .. } => LayerKind::Dropout,
            Self::Activation(_) => LayerKind::Activation,
        }
    }

    /// Hyper-parameter vector in the same encoding the layers report.
    fn hyper_for(&self, input: &[usize]) -> Result<Vec<f64>> {
        Ok(match self {
            Self::Dense { units } => vec![input.iter().product::<usize>() as f64, *units as f64],
            Self::Conv1d { filters, kernel } => {
                let channels = channels_of(input)?;
                vec![channels as f64, *filters as f64, *kernel as f64]
            }
            Self::MaxPool1d { size } => vec![*size as f64],
            Self::BatchNorm => vec![input[0] as f64, input.len() as f64],
            Self::Dropout { rate } => vec![*rate],
            Self::Activation(a) => vec![a.code() as f64],
        })
    }
}

fn channels_of(input: &[usize]) -> Result<usize> {
    match input {
        [c, _] => Ok(*c),
        _ => Err(NeuralError::InvalidLayer(format!(
            "conv1d expects a [channels, length] input, got {input:?}"
        ))),
    }
}

type LayerCtor = fn(&[f64], &mut ChaCha8Rng) -> Result<Box<dyn Layer>>;

/// Maps layer kinds to constructors. Used both to build models from
/// [`LayerSpec`]s and to rebuild them from serialized files.
pub struct LayerRegistry {
    ctors: BTreeMap<LayerKind, LayerCtor>,
}

impl LayerRegistry {
    pub fn empty() -> Self {
        Self { ctors: BTreeMap::new() }
    }

    pub fn register(&mut self, kind: LayerKind, ctor: LayerCtor) {
        self.ctors.insert(kind, ctor);
    }

    pub fn kinds(&self) -> impl Iterator<Item = LayerKind> + '_ {
        self.ctors.keys().copied()
    }

    pub fn build(&self, kind: LayerKind, hyper: &[f64], rng: &mut ChaCha8Rng) -> Result<Box<dyn Layer>> {
        let ctor = self.ctors.get(&kind).ok_or_else(|| NeuralError::Unknown {
            kind: "layer",
            name: kind.to_string(),
        })?;
        ctor(hyper, rng)
    }

    pub fn build_spec(&self, spec: &LayerSpec, input: &[usize], rng: &mut ChaCha8Rng) -> Result<Box<dyn Layer>> {
        let hyper = spec.hyper_for(input)?;
        self.build(spec.kind(), &hyper, rng)
    }
}

impl Default for LayerRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(LayerKind::Dense, |h, rng| {
            let [inputs, units] = hyper_usize::<2>(h, "dense")?;
            Ok(Box::new(Dense::new(inputs, units, rng)?))
        });
        r.register(LayerKind::Conv1d, |h, rng| {
            let [cin, cout, k] = hyper_usize::<3>(h, "conv1d")?;
            Ok(Box::new(Conv1d::new(cin, cout, k, rng)?))
        });
        r.register(LayerKind::MaxPool1d, |h, _| {
            let [size] = hyper_usize::<1>(h, "maxpool1d")?;
            Ok(Box::new(MaxPool1d::new(size)?))
        });
        r.register(LayerKind::BatchNorm, |h, _| {
            let [features, rank] = hyper_usize::<2>(h, "batchnorm")?;
            Ok(Box::new(BatchNorm::new(features, rank)?))
        });
        r.register(LayerKind::Dropout, |h, _| match h {
            [rate] => Ok(Box::new(Dropout::new(*rate)?)),
            _ => Err(NeuralError::InvalidLayer("dropout takes one hyper-parameter".into())),
        });
        r.register(LayerKind::Activation, |h, _| {
            let [code] = hyper_usize::<1>(h, "activation")?;
            let act = Activation::from_code(code as u8)
                .ok_or_else(|| NeuralError::InvalidLayer(format!("unknown activation code {code}")))?;
            Ok(Box::new(ActivationLayer::new(act)))
        });
        r
    }
}

fn hyper_usize<const N: usize>(h: &[f64], what: &str) -> Result<[usize; N]> {
    if h.len() != N {
        return Err(NeuralError::InvalidLayer(format!(
            "{what} takes {N} hyper-parameters, got {}",
            h.len()
        )));
    }
    let mut out = [0usize; N];
    for (o, &v) in out.iter_mut().zip(h) {
        if !(v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64) {
            return Err(NeuralError::InvalidLayer(format!("{what}: bad hyper-parameter {v}")));
        }
        *o = v as usize;
    }
    Ok(out)
}

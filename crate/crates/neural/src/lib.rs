//! Small CPU neural-network engine: 1-D convolutional and dense layers,
//! batch normalisation, dropout, the usual losses and optimizers, and a
//! binary model format. Everything runs in `f64`.

mod compiled;
mod error;
mod gemm;
pub mod gradcheck;
mod layer;
pub mod layers;
mod loss;
mod model;
mod optim;
mod serialize;
mod tensor;
mod train;

pub use compiled::CompiledModel;
pub use error::{NeuralError, Result};
pub use layer::{ForwardCtx, Layer, LayerKind, LayerRegistry, LayerSpec, Param};
pub use layers::Activation;
pub use loss::{BinaryCrossEntropy, CategoricalCrossEntropy, Loss, LossArgs, LossRegistry, Mse};
pub use model::Sequential;
pub use optim::{Adam, Optimizer, OptimizerRegistry, RmsProp};
pub use serialize::{load_model, read_model, read_model_with, save_model, write_model, FORMAT_VERSION, MAGIC};
pub use tensor::Tensor;
pub use train::{evaluate_loss, train, train_with_validation, Dataset, SplitStrategy, TrainConfig, TrainHistory};

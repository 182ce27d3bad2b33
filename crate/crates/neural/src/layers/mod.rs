mod activation;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod pool;

pub use activation::{Activation, ActivationLayer, LEAKY_RELU_SLOPE};
pub use batchnorm::BatchNorm;
pub use conv::Conv1d;
pub use dense::Dense;
pub use dropout::Dropout;
pub use pool::MaxPool1d;

pub(crate) use activation::{sigmoid, softmax_in_place};
pub(crate) use batchnorm::EPS as BATCHNORM_EPS;

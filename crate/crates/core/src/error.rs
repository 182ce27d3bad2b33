use std::io;

use canloc_neural::NeuralError;
use thiserror::Error;

use crate::bussim::TapPoint;
use crate::can::CanError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Can(#[from] CanError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("invalid electrical parameters: {0}")]
    InvalidParams(String),
    #[error("no ECU connected at tap {0}")]
    EmptyTap(TapPoint),
    #[error("trace has {found} eligible edges, {needed} required")]
    TooFewEdges { found: usize, needed: usize },
    #[error("feature length {actual} does not match the expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("trace file: {0}")]
    TraceFormat(String),
    #[error("unknown CAN identifier {0:#05x}")]
    UnknownId(u16),
    #[error("class `{0}` has no training examples")]
    ClassAbsent(String),
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("model: {0}")]
    Model(String),
}

pub type Result<T> = std::result::Result<T, Error>;

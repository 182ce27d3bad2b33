pub mod auth;
pub mod bussim;
pub mod can;
pub mod config;
pub mod dataset;
pub mod detector;
pub mod features;
pub mod localizer;
pub mod metrics;
pub mod orchestrator;
pub mod pipeline;
pub mod roster;
pub mod tracefile;
mod error;

pub use error::{Error, Result};

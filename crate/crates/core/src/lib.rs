pub mod cli;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod encoder;
mod error;
pub mod mdc;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod seeds;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

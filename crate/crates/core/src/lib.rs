pub mod cli;
pub mod encoders;
pub mod error;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};

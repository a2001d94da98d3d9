pub mod cli;
pub mod data;
pub mod dsp;
pub mod error;
pub mod experiment;
pub mod gradsuite;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

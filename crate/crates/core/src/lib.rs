pub mod autodiff;
pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DType, Real, Tensor};
pub mod model;
pub mod synth;
pub mod train;
pub mod detect;
pub mod config;
pub mod cli;

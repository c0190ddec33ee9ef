pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod spectral;
pub mod error;
pub mod layers;
pub mod model;
pub mod parallel;
pub mod resample;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{CTensor, Scalar, Tensor, Value};

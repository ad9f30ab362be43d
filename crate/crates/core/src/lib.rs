mod bytes;
pub mod data;
pub mod error;
pub mod kv;
pub mod loss;
pub mod nn;
pub mod parallel;
pub mod rng;
pub mod roi;
pub mod tensor;
pub mod train;
pub mod unet;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;

pub mod autodiff;
pub mod error;
pub mod metrics;
pub mod models;
pub mod rl;
pub mod scalar;
pub mod text;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub(crate) fn short_hex(bytes: &[u8]) -> String {
    bytes.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Single-precision instantiations used for training and inference.
pub type Tensor = autodiff::Tensor<f32>;
pub type ParamStore = autodiff::ParamStore<f32>;
pub type GradientVector = autodiff::GradientVector<f32>;
pub type Tagger = models::Tagger<f32>;
pub type Generator = models::Generator<f32>;
pub type Trainer<'a> = rl::Trainer<'a, f32>;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod export;
pub mod latent;
pub mod losses;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod pretrained;
pub mod scalar;
pub mod text;
pub mod train;
pub mod weak;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// The single-precision model used for training and inference.
pub type Model = model::DisentangleModel<f32>;

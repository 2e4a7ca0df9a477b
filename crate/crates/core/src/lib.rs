//! Semi-supervised tree feature recognition and species classification.
//!
//! The crate is generic over the scalar type ([`Scalar`]): training runs in
//! `f32`, while gradient checks and oracles instantiate the same code in
//! `f64`. The aliases below name the common instantiations.

pub mod augment;
pub mod data;
pub mod error;
pub mod eval;
pub mod imageio;
pub mod influence;
pub mod nn;
pub mod objective;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type Model32 = nn::ClassifierModel<f32>;
pub type Model64 = nn::ClassifierModel<f64>;

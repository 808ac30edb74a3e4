//! Feature-alignment diagnostics for small fully-connected networks: weight
//! Gram matrices versus gradient outer products, their centered variants,
//! free-probability predictions of early-time alignment, and layerwise
//! normalized optimizers.

mod error;
mod rng;
mod scalar;

pub mod linalg;
pub mod metrics;
pub mod datasets;
pub mod network;
pub mod theory;
pub mod optim;
pub mod experiment;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use rng::Rng;
pub use scalar::Scalar;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;

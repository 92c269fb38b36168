//! Core library for mask-based adversarial autoencoder experiments on
//! synthetic manifolds: data generation, the model and its objectives,
//! training, evaluation metrics, and numeric checks of the supporting
//! theory.

pub mod error;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod rng;
pub mod synthetic;
pub mod tape;
pub mod theory;
pub mod train;

pub use error::{MaaeError, Result};

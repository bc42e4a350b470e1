//! Rotation-invariant variational quantum classifiers for square images.

pub mod circuits;
pub mod cnn;
pub mod data;
pub mod error;
pub mod experiments;
pub mod hybrid;
pub mod metrics;
pub mod statevector;
pub mod symmetry;
pub mod training;

pub use error::{Error, Result};

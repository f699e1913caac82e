//! Multiplex brain-network synthesis with a graph GAN, and the downstream
//! feature-selection / classification pipeline built on it.

pub mod checkpoint;
pub mod classify;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod gradcheck;
pub mod knn;
pub mod layers;
pub mod multiplex;
pub mod numerics;
pub mod select;
pub mod train;
pub mod translator;

pub use error::{Error, Result};
pub use numerics::{DenseTensor, Prng};

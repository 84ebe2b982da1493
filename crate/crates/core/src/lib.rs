//! Spiking neural networks with latent replay for continual learning.

pub mod checkpoint;
pub mod continual;
pub mod error;
pub mod metrics;
pub mod neuron;
pub mod replay;
pub mod rng;
pub mod spike;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

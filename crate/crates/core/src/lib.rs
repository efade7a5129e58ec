//! Spiking network trained with symmetric STDP: conductance-based LIF
//! neurons, adaptive thresholds, synaptic scaling, and a supervised output
//! layer driven by a Poisson teacher.

pub mod config;
pub mod dataio;
pub mod encoding;
pub mod error;
pub mod metrics;
pub mod neurodyn;
pub mod plasticity;
pub mod topology;
pub mod trainer;

pub use config::{RunConfig, SimParams, TrainMode};
pub use error::{Result, SnnError};

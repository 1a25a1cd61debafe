//! Super-resolution of column under-sampled OCT B-scans with a dual-branch
//! hybrid-attention network.
//!
//! The pipeline runs from data preparation ([`dataio`]) and unsharp-masking
//! decomposition ([`frequency`]) through the network ([`model`]) and its
//! composite loss ([`losses`]) to training, evaluation ([`trainer`]) and
//! image-quality metrics ([`metrics`]).

pub mod cli;
pub mod config;
pub mod dataio;
pub mod error;
pub mod frequency;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use config::RunConfig;
pub use dataio::{Image, SamplePair};
pub use error::{Error, Result};
pub use model::{ModelConfig, ParameterSet};
pub use tensor::Tensor;

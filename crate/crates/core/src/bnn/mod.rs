//! Networks with dropout in front of every weight layer, trained with Adam
//! and sampled at test time with dropout left on.

mod dropout;
mod network;
mod spectral;
mod train;

pub use dropout::{dropout_mask, embedding_component_variance};
pub use network::{LayerSpec, MCRun, Network, NetworkSpec};
pub use spectral::{spectral_normalize, SpectralStep};
pub use train::{accuracy, train, EpochStats, TrainConfig, TrainOutcome};

/// Number of stochastic passes used for feature extraction.
pub const DEFAULT_MC_SAMPLES: usize = 32;

//! The restoration network: configuration, graph, serialization and analysis.

mod config;
mod network;
mod spectrum;
mod weights;

pub use config::{BranchMode, ChannelMode, ChromaMode, ModelConfig, ReuKind, REU_CHANNELS};
pub use network::{network_gradcheck, network_input, output_image, Idcn, KernelCache, ReuProbe, TableKernels};
pub use spectrum::{dct_loss_spectrum, LossSpectrum};
pub use weights::{ModelWeights, FORMAT_VERSION};

//! Denoiser network, gradient engine, optimizer, training loop and
//! checkpointing.

pub mod adam;
pub mod checkpoint;
pub mod feat;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod train;
pub mod unet;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{config_hash, load_checkpoint, save_checkpoint, Checkpoint};
pub use feat::Feat;
pub use params::ParamStore;
pub use tape::{Gradients, NodeId, Tape};
pub use train::{train, PairSource, TrainConfig, TrainOutput};
pub use unet::{
    expected_param_count, forward, init_params, ParamGrads, ParamLeaves, UNetConfig, UNetDenoiser,
};

//! Convolutional autoencoder over coefficient images.
//!
//! Encoder: two strided 3x3 convolutions (16 and 8 filters, ReLU), flatten,
//! dense map to a 3-dimensional latent. Inverted dropout can be applied to
//! the latent. Decoder: dense map back to the flattened feature map (ReLU),
//! then two transposed convolutions mirroring the encoder, the last one
//! linear.

mod checkpoint;
pub mod layers;
mod network;
mod objective;
mod train;
mod uncertainty;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use network::{recon_loss, Architecture, LatentPoint, Layout, NetworkParams, ReconResult};
pub use objective::{
    grad_total_loss, separation_and_grad, total_loss, LossGradient, Sample, SeparationScale,
};
pub use train::{train_epoch, EpochLosses, OptimizerState, TrainConfig};
pub use uncertainty::{
    mc_uncertainty, split_by_uncertainty, UncertaintyScore, UncertaintySplit,
    UNCERTAINTY_PERCENTILE,
};

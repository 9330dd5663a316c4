//! The trainable conditional denoiser: network, losses, exact gradients,
//! optimizer loop and checkpointing.

pub mod checkpoint;
pub mod loss;
pub mod network;
pub mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use loss::{grad, loss_hybrid, loss_hybrid_detached, loss_simple, LossVariant, TrainSample};
pub use network::{Architecture, DenoiserParams, ForwardCache};
pub use train::{mean_loss, train, TrainConfig, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

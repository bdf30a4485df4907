//! Parameter updates: the maximum-likelihood step on the energy from
//! Langevin-revised samples, and the variational step that teaches the
//! generator/encoder pair to reproduce those samples.

mod adam;
mod trainer;
mod vae;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use trainer::{
    batch_indices, ebm_grad, LossReport, TrainConfig, Trainer, TrainerState,
};
pub use vae::{gauss_hermite, kl_diag_gaussian_to_prior, vae_loss, ElboEstimator, VaeLoss};

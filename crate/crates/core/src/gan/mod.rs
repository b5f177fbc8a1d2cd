//! Convolutional GAN that predicts the next RTLMP frame from `n` history
//! frames.

mod config;
mod loss;
mod model;
mod train;

pub use config::{GanArch, GanConfig};
pub use loss::{
    bce_grad, loss_bce, loss_d, loss_dcl, loss_g, loss_gdl, loss_gdl_grad, loss_lp, loss_lp_grad, pixel_loss_grad,
    sgn, GenLossTerms, BCE_EPS,
};
pub use model::{discriminator_spec, generator_spec, GanModel, DISCRIMINATOR, GENERATOR};
pub use train::{train, validation_l2, StopReason, TrainLog, TrainLogRow, Trainer, DIVERGENCE_LIMIT, LOG_HEADER};

/// Independent sub-seed for purpose `tag`.
pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

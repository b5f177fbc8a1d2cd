//! Next-hour zonal electricity price prediction framed as next-frame video
//! prediction.
//!
//! Zonal market time series are packed into image-like frames
//! ([`market_data`]), a convolutional GAN learns to generate the next price
//! frame ([`gan`], built on the small engine in [`nn`]), an ARMA model of the
//! prediction error corrects the output ([`calibration`]), and [`evaluation`]
//! scores the result.

pub mod calibration;
pub mod error;
pub mod evaluation;
pub mod gan;
pub mod market_data;
pub mod nn;
pub mod render;
pub mod stats;

pub use error::{Error, Result};

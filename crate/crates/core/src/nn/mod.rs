//! A small deterministic neural-network engine in double precision.
//!
//! Activations are batch-first: `[batch, channels, height, width]` for
//! spatial layers and `[batch, features]` after `flatten`. Convolutions are
//! 3x3 with stride 1 and run through im2col plus GEMM.

mod checkpoint;
mod kernels;
mod layer;
mod network;
mod tensor;

pub use checkpoint::{Checkpoint, MAGIC};
pub use layer::{LayerSpec, NetworkSpec, Padding, BN_EPS, BN_MOMENTUM};
pub use network::{Cache, Gradients, LayerParams, Mode, NetworkState, INIT_STD};
pub use tensor::Tensor;

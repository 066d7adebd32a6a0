//! Scale-equivariant layers.
//!
//! The central operation is scale correlation over a scale-space stack:
//! a filter bank spanning `K_s` adjacent scales, whose spatial taps spread
//! by `2^k` at level `k`. Shifting the input up by one level shifts the
//! output up by one level, which is what "scale-equivariant" means here.
//! Because the top levels have nothing above them, outputs near the top of
//! the stack are only approximately equivariant; see the
//! [`equivariance`](crate::equivariance) module.
//!
//! Around it sit the usual network pieces: ReLU, batch norm, pooling over
//! scale or space, residual and densely connected blocks, and a small
//! text format for describing whole networks.

mod bank;
mod correlate;
mod layers;
mod network;

pub use bank::{
    decode_bank, decode_banks, encode_bank, init_identity, init_identity_with, BankShape, FilterBank,
};
pub use correlate::{scale_correlate, scale_correlate_with, ScaleBoundary};
pub use layers::{
    batch_norm, batch_statistics, concat_channels, dense_block, pad_channels, relu, residual_block,
    scale_pool, spatial_avg_pool, BatchNormState, BlockOptions, BnMode,
};
pub use network::{ForwardOptions, LayerSpec, Network, NetworkSpec, NetworkWeights};

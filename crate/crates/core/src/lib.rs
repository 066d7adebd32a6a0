//! Scale-spaces on the integer lattice and neural-network layers that are
//! equivariant to dilations by powers of two.
//!
//! The crate is organised bottom-up:
//!
//! * [`kernels`]: discrete Gaussian, binomial, sampled-Gaussian and alpha
//!   kernels, plus separable blurring;
//! * [`semigroup`]: scale-shift elements, finite semigroups and semigroup
//!   correlation;
//! * [`scalespace`]: lifting an image to a stack of blurred copies;
//! * [`dss`]: scale correlation and the layers built around it;
//! * [`equivariance`]: measuring how far a network is from exact
//!   equivariance.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN.

pub mod dss;
pub mod equivariance;
pub mod error;
pub mod image;
pub mod kernels;
pub mod numfmt;
pub mod scalespace;
pub mod semigroup;

pub use error::{Error, Result};
pub use image::Image;

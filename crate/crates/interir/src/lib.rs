//! Interpretable multi-degradation image restoration.
//!
//! The crate couples a classical solver for the Kronecker-factored
//! restoration model with its unfolded network counterpart:
//!
//! - [`tensor`]: dense f64 tensors and the numeric kernels everything uses
//! - [`image`]: bit-exact PPM/PGM I/O and luma conversion
//! - [`degrade`]: synthetic haze / rain / noise generation
//! - [`operators`]: feature transform, its adjoint, proximal maps, and the
//!   classical degradation-matrix updates
//! - [`solver`]: the alternating second-order scheme in closed form
//! - [`unfolded`]: the block-unrolled network with the input-adaptive
//!   (explainable) convolution, plus weight (de)serialization
//! - [`metrics`]: PSNR / SSIM / spatial+frequency training loss
//! - [`verify`]: self-contained oracle and property suites
//! - [`cli`]: the `interir` command-line front end

pub mod cli;
pub mod degrade;
pub mod error;
pub mod image;
pub mod manifest;
pub mod metrics;
pub mod operators;
pub mod rng;
pub mod solver;
pub mod tensor;
pub mod unfolded;
pub mod verify;

pub use error::{Error, Result};

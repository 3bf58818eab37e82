//! Blind light-field super-resolution with explicit degradation estimation.
//!
//! The crate covers the whole pipeline: a 4D [`LightField`] container, the
//! synthetic blur/downsample/noise forward model, a learned estimator of
//! per-view blur kernels and noise maps, a degradation-conditioned
//! restoration network, a two-stage trainer and a PSNR/SSIM sweep harness.

pub mod artifacts;
pub mod degradation;
pub mod error;
pub mod eval;
pub mod lightfield;
pub mod nn;
pub mod spectral;
pub mod train;

pub use error::{Error, Result};
pub use lightfield::{LightField, ViewIndex};

//! Event-camera video reconstruction laboratory.
//!
//! The crate covers the whole path from intensity video to events and back:
//!
//! * [`numerics`]: dense `f64` tensors, a reverse-mode tape, convolution and AdamW.
//! * [`events`]: the event data model, the `EVS1` binary and CSV formats, temporal
//!   windowing, voxel grids and training-time event corruption.
//! * [`simulator`]: a log-intensity threshold-crossing event simulator and the
//!   direct integration baseline.
//! * [`degrade`]: procedural low-quality surrogate synthesis from clean images.
//! * [`model`]: the gated recurrent event encoder, latent codec, denoiser and the
//!   one-step latent update.
//! * [`training`]: corpus builders and the three training stages.
//! * [`metrics`]: MSE / SSIM and the grayscale evaluation protocol.

pub mod config;
pub mod degrade;
pub mod error;
pub mod events;
pub mod image;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod simulator;
pub mod training;

pub use error::{Error, Result};
pub use image::Image;

//! Lensless gesture recognition toolkit.
//!
//! Simulates a mask-based lensless camera, reconstructs scenes with ADMM or
//! a learned restorer, and classifies 8-frame gesture clips either from
//! scenes, reconstructions, or directly from the raw sensor video.

pub mod analysis;
pub mod clip;
pub mod dataset;
pub mod error;
pub mod imageio;
pub mod models;
pub mod nn;
pub mod optics;
pub mod recon;
pub mod resample;
pub mod sampling;
pub mod training;
pub mod seed;

pub use clip::{ClipKind, VideoClip, CLIP_LEN};
pub use error::{Error, Result};

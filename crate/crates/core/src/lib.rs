//! Diffusion over articulation-agnostic hand layouts.

pub mod cli;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod grid;
pub mod image;
pub mod metrics;
pub mod render;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

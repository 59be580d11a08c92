//! Reference-guided Gaussian-splatting scene inpainting.
//!
//! This crate holds the allocation-only algorithmic core: the differentiable
//! splat rasterizer, depth alignment and filtering, reference warping and
//! Poisson blending, per-view inpainting confidence, the training losses and
//! optimizer stages, the synthetic scene oracle, and evaluation metrics. File
//! formats and the command-line front end live in the `splatfill` crate.

#![no_std]

extern crate alloc;

pub mod confidence;
pub mod depth;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod math;
pub mod optim;
pub mod perceptual;
pub mod poisson;
pub mod render;
pub mod scene;
pub mod ssim;
pub mod synth;
pub mod train;
pub mod warp;

pub use error::{Error, Result};

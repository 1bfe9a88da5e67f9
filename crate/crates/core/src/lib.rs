//! Low-rank adapter training and merging on a toy conditional diffusion model.
//!
//! A procedural two-factor image world ([`scenegen`]) stands in for photo
//! data. A small patch transformer ([`denoiser`]) is pretrained on it and then
//! adapted with low-rank adapters ([`lora`]): one adapter learns a camera view
//! from a single scene, another learns an object from a few shots. The
//! [`merge`] module combines the two, either linearly or through trained
//! per-column gates with a cosine penalty, and [`experiments`] runs the full
//! protocol with masked SSIM/PSNR scoring from [`metrics`].

pub mod error;
pub mod numerics;
pub mod denoiser;
pub mod lora;
pub mod experiments;
pub mod merge;
pub mod metrics;
pub mod scenegen;

pub use error::{Error, Result};

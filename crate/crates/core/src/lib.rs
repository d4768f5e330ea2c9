//! Desk-scale visual-aligned text-to-audio pipeline.
//!
//! The crate generates synthetic audio/video/text triplets with known
//! temporal event structure, trains a lightweight visual-text alignment
//! module with a per-timestep contrastive objective, conditions a latent
//! diffusion model on the resulting visual-aligned text embeddings, and
//! evaluates generations with Frechet-distance / Inception-Score style
//! metrics. All math is 64-bit, single-threaded and reproducible from seeds.

pub mod error;
pub mod metrics;
pub mod numerics;
pub mod optim;
pub mod pipeline;
pub mod alignment;
pub mod codec;
pub mod config;
pub mod contrastive;
pub mod diffusion;
pub mod encoders;
pub mod snapshot;
pub mod synthdata;

pub use error::{Error, Result};

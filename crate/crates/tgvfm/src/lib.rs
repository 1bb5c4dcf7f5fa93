//! Event-vision pipeline with temporal context fusion.
//!
//! The crate covers the full desk-scale loop: synthetic scene generation and
//! contrast-threshold event simulation ([`events`]), voxel encoding, recurrent
//! grayscale reconstruction ([`e2vid`]), a ViT-style backbone augmented with
//! temporal context fusion blocks ([`tcfb`], [`backbone`]), task losses and
//! metrics ([`metrics`]), and a reproducible training/ablation harness
//! ([`harness`]). All numerics run in f64 on a small reverse-mode tape
//! ([`tape`]) so analytic gradients can be held to tight finite-difference
//! tolerances.

pub mod backbone;
pub mod ckpt;
pub mod e2vid;
pub mod error;
pub mod events;
pub mod harness;
pub mod layers;
pub mod metrics;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tcfb;

pub use error::{Error, Result};

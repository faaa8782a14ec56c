//! Pulling target-domain features towards source prototypes for
//! domain-adaptive semantic segmentation, at desk scale.
//!
//! The crate covers the whole loop on synthetic two-domain data: Fourier
//! amplitude translation, a mean-teacher student with exact gradients,
//! class-balanced contrastive pairing with confidence re-weighting, and the
//! feature-space diagnostics used to inspect the result.

pub mod analysis;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod pairing;
pub mod trainer;
pub mod translate;

pub use error::{Error, Result};

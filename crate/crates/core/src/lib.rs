//! Cross-view mask matching on precomputed dense features.
//!
//! Given a source-view object mask and candidate masks in a destination view,
//! the engine pools mask and context descriptors from both views' feature
//! maps, refines them with cross-view attention, embeds them with a small MLP
//! and picks the candidate closest to the source in the latent space.

pub mod ablation;
pub mod attention;
mod binio;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod head;
pub mod mining;
pub mod model;
pub mod optim;
pub mod pack;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

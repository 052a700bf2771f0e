//! Masked appearance-motion pre-training for video transformers.

pub mod blocks;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod losses;
pub mod masking;
pub mod model;
pub mod numerics;
pub mod params;
pub mod patch_embed;
pub mod rng;
pub mod targets;
pub mod training;

pub use error::{Error, Result};

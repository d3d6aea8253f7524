//! Retrieval training with simulated domain-shift variants, geometric
//! consistency filtering and sampling of those variants, match-kernel
//! retrieval, and localization evaluation on a procedurally generated street.

pub mod camera;
pub mod embed;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod index;
pub mod io;
pub mod localize;
pub mod rng;
pub mod variants;
pub mod worldgen;

pub use error::{Error, Result};

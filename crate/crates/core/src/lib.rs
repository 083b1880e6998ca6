pub mod baselines;
pub mod codec;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod index;
pub mod instructions;
pub mod metrics;
pub mod pdc;
pub mod query;
pub mod ranked;

pub use embedding::EmbeddingVector;
pub use error::{Error, Result};

pub type ImageId = u64;
pub type BBoxId = u64;
pub type ClassId = u32;
/// Identifier carried by ranked lists (image ids after patch reduction).
pub type ItemId = u64;

//! Convolutional dual-chain knowledge-graph embeddings.

pub mod cdc;
pub mod cli;
pub mod error;
pub mod evaluator;
pub mod kgdata;
pub mod numerics;
pub mod text_encoder;
pub mod trainer;

pub use error::{Error, Result};

//! Few-shot class-incremental learning at desk scale: a tiny frozen
//! transformer encoder with low-rank adapters on the key/value projections,
//! margin-penalty cosine classification, Fisher-weighted intra-task adapter
//! merging, and margin-penalty classifier calibration with Gaussian
//! pseudo-feature replay, over seeded synthetic datasets.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod error;
pub mod margin;
pub mod metrics;
pub mod miam;
pub mod mpcc;
pub mod numerics;
pub mod pipeline;
pub mod protocol;

pub use error::{Result, SmpError};

//! Structural-entropy multi-view contrastive learning for social bot detection.
//!
//! The library models a social platform as an attributed multi-relational
//! graph and classifies accounts as human or bot by fusing three views:
//!
//! 1. a whole-graph view encoded through an entropy-minimizing encoding tree
//!    (hierarchical pooling and unpooling),
//! 2. a per-node ego-subgraph view encoded through per-subgraph encoding
//!    trees (pooling with per-level readout),
//! 3. an edge-dropped relational view encoded with signed, Gumbel-perturbed
//!    edge weights and channel-wise relation mixing.
//!
//! Training combines supervised cross-entropy with node-level and
//! subgraph-level contrastive objectives. Everything runs on a small,
//! deterministic reverse-mode autodiff engine over dense `f64` matrices, so
//! experiments are reproducible bit-for-bit from `(dataset, config, seed)`.

pub mod autodiff;
pub mod datagen;
pub mod dataio;
pub mod entropy;
pub mod error;
pub mod graph;
mod matrix;
pub mod objectives;
pub mod pipeline;
pub mod pooling;
pub mod relenc;

pub use error::{Result, SebotError};
pub use matrix::Matrix;

//! Cross-view geo-localization toolkit.
//!
//! Matches ground panoramas against aerial imagery with layout-aware
//! embeddings: a CNN backbone extracts raw features, a transformer-based
//! layout extractor predicts mask-like descriptors, and the retrieval
//! embedding is the set of Frobenius inner products between the two. Batch
//! construction can synthesize hard contrastive samples by re-rendering the
//! same pair under different geometric layouts, and a counterfactual penalty
//! keeps the learned descriptors away from uninformative ones.
//!
//! The crate ships the full pipeline: synthetic paired-data generation,
//! manifest ingestion and pixel-hash deduplication, augmentation, training
//! with checkpointing, exact nearest-neighbor evaluation, and figure-style
//! exports, all behind both a library API and the `crossview` CLI.

pub mod error;
pub mod imaging;

pub use error::{Error, Result};
pub mod dataset;
pub mod eval;
pub mod graph;
pub mod model;
pub mod objectives;
pub mod sampling;
pub mod trainer;
pub mod viz;

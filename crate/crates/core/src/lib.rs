//! Training-free prediction of how much fine-tuning on a source dataset
//! helps a target benchmark, from precomputed field embeddings and answer
//! token log-probabilities.
//!
//! The pipeline: [`ingest`] loads manifests and JSON Lines records,
//! [`metric::summarize`] reduces each dataset to centroids, perplexity and
//! question diversity, [`metric::influence_matrix`] scores every
//! source/target pair, and [`rank::two_way_eval`] compares predicted and
//! observed rankings. [`selection`] turns scores into training budgets.

pub mod cli;
pub mod diversity;
pub mod error;
pub mod ingest;
pub mod matrix;
pub mod metric;
pub mod rank;
pub mod rng;
pub mod selection;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};

/// Version tag written into every artifact.
pub const FORMAT_VERSION: &str = "1";

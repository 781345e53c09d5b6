//! Top-k sparse autoencoders over dense text embeddings.
//!
//! This crate holds the numerical side of the system and builds without `std`
//! (it needs `alloc`): corpus normalization, the autoencoder and its trainer,
//! reconstruction metrics and power-law fits, the labelling protocol used to
//! score features, feature matching and feature-family extraction, embedding
//! interventions, and brute-force cosine retrieval.
//!
//! File formats, HTTP clients, the search service and the command line live in
//! the companion `saerch` crate.

#![no_std]

extern crate alloc;

pub mod analysis;
pub mod autointerp;
pub mod catalog;
pub mod corpus;
mod error;
pub mod linalg;
pub mod median;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod search;
mod serde_util;
pub mod steering;
pub mod train;

pub use catalog::{FeatureCatalog, FeatureEntry};
pub use corpus::{CorpusTag, DocumentRecord, EmbeddingCorpus, NormStats};
pub use error::{Error, Result};
pub use model::{SaeConfig, SaeModel, SparseActivation};
pub use train::{train, TrainingLog};

//! Attribute-driven disentangled multimodal recommendation.
//!
//! User and item representations are split into per-attribute chunks. The
//! chunks are supervised by item attributes within and across modalities, and
//! items are ranked by a sum of positive per-attribute preference scores. That
//! sum can be decomposed for explanations or re-weighted to steer rankings.
//!
//! The crate is organised bottom-up:
//!
//! - [`diffcore`]: dense `f64` tensors and a reverse-mode tape
//! - [`datahub`]: ingestion, splits, negative sampling, synthetic data
//! - [`model`]: forward computation and every loss term
//! - [`trainer`]: Adam, the training loop, checkpoints, ablations, grids
//! - [`evalkit`]: ranking metrics, probes and reports

pub mod datahub;
pub mod diffcore;
pub mod error;
pub mod evalkit;
pub mod model;
pub mod rng;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};

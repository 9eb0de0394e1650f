//! Spoiler sentence detection with a dependency-relation-aware attention GNN.
//!
//! The pipeline: pre-parsed sentences (CoNLL-U or line-delimited JSON records)
//! become labeled dependency graphs; a bi-directional LSTM produces token
//! features; `k` relation-attention layers mix features along typed dependency
//! edges; genre-aware pooling yields a sentence vector; a logistic classifier
//! produces the spoiler probability.
//!
//! Everything numeric runs on a small reverse-mode autodiff tape in
//! [`numcore`], in 64-bit floats.

pub mod data;
pub mod error;
pub mod eval;
pub mod graphbuild;
pub mod model;
pub mod numcore;
pub mod train;

pub use error::{Error, Result};

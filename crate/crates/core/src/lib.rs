//! Deep collective matrix factorization.
//!
//! Learns one nonlinear embedding per entity from an arbitrary collection of
//! relationship matrices by training one autoencoder per entity jointly with
//! the matrix reconstructions that share those embeddings. Includes the
//! linear collective factorization baseline, multi-task Bayesian
//! hyperparameter tuning, synthetic benchmarks and evaluation metrics.

// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autoencoder;
pub mod bench;
pub mod cmf;
pub mod config;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod hyperopt;
pub mod io;
pub mod numerics;
pub mod seed;

pub use error::{Error, Result};

//! Multiscale Bayesian nonparametric mixture model for partial hierarchical
//! clustering.
//!
//! The model places Gaussian kernels on the nodes of an infinite binary tree.
//! Branch probabilities drive a path process that assigns each subject to a
//! node (its cluster), kernel locations accumulate additively along the path,
//! and kernel scales shrink by successive rank-one subtractions, so deep
//! kernels collapse onto their ancestors and the tree can be truncated at a
//! finite depth. An equivalent factorized representation
//! `y = Theta rho + LambdaTilde (rho_tilde .* z_tilde) + Lambda ((1-rho) .* z) + eps`
//! drives both the forward simulator and the Gibbs sampler.
//!
//! Crate layout:
//! - [`tree`]: path/stop encodings and node addressing on the binary tree.
//! - [`weights`]: branch-probability sequences and level weights.
//! - [`kernel`]: kernel location/scale assembly, collapse probabilities,
//!   truncation suggestion.
//! - [`prior`]: the prior stack (spike-and-slab level scales, local scales,
//!   probit path coefficients, noise precisions).
//! - [`generative`]: forward simulation of parameters, paths and data.
//! - [`gibbs`]: the seven-step Gibbs sampler, adaptive truncation, sample
//!   alignment, and a joint-distribution (Geweke-style) test harness.
//! - [`summary`]: co-clustering matrices, point partitions, ARI, tree reports.
//! - [`data`], [`config`], [`chain_io`], [`cli`]: dataset ingestion, run
//!   configuration, chain persistence, and the command-line surface.

pub mod chain_io;
pub mod cli;
pub mod config;
pub mod data;
pub mod generative;
pub mod gibbs;
pub mod kernel;
pub mod numeric;
pub mod prior;
pub mod rng;
pub mod summary;
pub mod tree;
pub mod weights;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),
    /// An index or pattern does not fit inside the working truncation level.
    #[error("truncation error: {0}")]
    Truncation(String),
    /// Matrix or vector dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),
    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),
    /// A numerical routine failed (non-finite values, failed factorization).
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// CLI exit code: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}

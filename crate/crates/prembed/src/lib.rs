//! Directed graph embeddings in pseudo-Riemannian manifolds.
//!
//! Embeds directed graphs (including graphs with cycles) as points on flat,
//! hyperbolic and Lorentzian manifolds by minimizing a negative log-likelihood
//! built from the Triple Fermi-Dirac edge-probability function, and evaluates
//! the embeddings on link prediction.
//!
//! The crate is organized around six modules:
//!
//! - [`manifold`]: manifold specifications, distances, time coordinates,
//!   exponential maps, tangent projections and descent directions.
//! - [`likelihood`]: the FD and Triple Fermi-Dirac edge probabilities, their
//!   cylinder-wrapped variants, NLL loss and analytic partials.
//! - [`graph`]: synthetic generators, edge-list ingestion, train/test splits
//!   and negative sampling.
//! - [`optimizer`]: the pseudo-Riemannian SGD training loop.
//! - [`eval`]: link-prediction metrics, heatmaps and the disk-embedding
//!   equivalence check.
//! - [`config`] / [`commands`]: experiment configuration and the CLI verbs.

pub mod commands;
pub mod config;
pub mod eval;
pub mod graph;
pub mod likelihood;
pub mod manifold;
pub mod optimizer;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid manifold spec: {0}")]
    InvalidSpec(String),
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error("point too far from constraint surface to repair (residual {0:.3e})")]
    RepairFailure(f64),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("negative sampling failed: {0}")]
    Sampling(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

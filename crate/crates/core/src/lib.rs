//! Gaussian process inference on a reverse-mode matrix tape.
//!
//! The crate is organized around a small computation-graph engine
//! ([`adgraph`]) whose op vocabulary covers the dense linear algebra that
//! GP models need (Cholesky factorization and triangular solves included),
//! a constrained-parameter layer ([`foundation`]), covariance functions
//! ([`kernels`]), observation models ([`likelihoods`]), six inference
//! classes ([`models`]), and gradient-based training plus Hamiltonian
//! Monte Carlo ([`inference`]).

pub mod adgraph;
pub mod datasets;
pub mod error;
pub mod foundation;
pub mod kernels;
pub mod inference;
pub mod likelihoods;
pub mod models;
pub mod special;

pub use error::{Error, Result};

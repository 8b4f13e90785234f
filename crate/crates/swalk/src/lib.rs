//! Session-based recommendation from two linear item models composed by a
//! random walk with restart.
//!
//! The pipeline: preprocess an event log into sessions, fit an item
//! transition model and an item teleportation model with closed-form ridge
//! regression, turn both into stochastic matrices, compose them into a
//! single item-item scoring matrix by iterating the walk update, optionally
//! prune the result by magnitude, and score session prefixes against it.

pub mod corpus;
pub mod dense;
pub mod error;
pub mod eval;
pub mod hyper;
pub mod linalg;
pub mod linear;
pub mod recommend;
pub mod sparse;
pub mod store;
pub mod synth;
pub mod walk;

pub use dense::{DenseMatrix, Scalar};
pub use error::{Error, Result};
pub use sparse::{SparseMatrix, SparseScores};

//! Hyper-parametrized least squares with exact solution-map gradients, and an
//! adaptive proximal-gradient tuner that optimizes hyper-parameters against a
//! held-out validation objective.
//!
//! The crate is organized around three solver routes and the tuning stack on
//! top of them:
//!
//! - [`dense_ls`]: Gram/Cholesky solve with cached factorization and analytic
//!   gradients of any scalar function of the solution with respect to the
//!   problem data.
//! - [`sparse_ls`]: matrix-free conjugate gradients on the normal equations,
//!   with the data gradient restricted to a caller-chosen sparsity pattern.
//! - [`eq_ls`]: equality-constrained least squares through the KKT system,
//!   with adjoint gradients for all four data blocks.
//! - [`tuner`]: the adaptive proximal-gradient loop and a small library of
//!   proximal operators.
//! - [`featurize`]: differentiable feature maps with parameter pullbacks,
//!   k-means archetypes, and graph incidence matrices.
//! - [`datafit`]: assembly of the weighted data-fitting problem, penalty
//!   functions, and the pullback from data-space gradients to
//!   hyper-parameter gradients.
//! - [`gradcheck`]: finite-difference utilities shared by the test suites and
//!   the CLI's self-check command.

pub mod datafit;
pub mod dense_ls;
pub mod eq_ls;
pub mod error;
pub mod featurize;
pub mod gradcheck;
mod ldlt;
pub mod matrix;
pub mod sparse_ls;
pub mod tuner;

pub use error::{Error, Result};
pub use matrix::DenseMatrix;

//! Data-driven polynomial chaos surrogates.
//!
//! Orthonormal and near-orthonormal polynomial bases are built for measures
//! given by samples or densities, sparse coefficient vectors are recovered by
//! l1 minimization, and a gradient-based input rotation concentrates the
//! expansion on fewer terms.

pub mod basis;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod measure;
pub mod multi_index;
pub mod par;
pub mod problems;
pub mod rotation;
pub mod sparse_solver;

pub use error::{Error, Result};

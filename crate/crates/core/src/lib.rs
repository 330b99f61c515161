//! Exact solver for rank-structured pseudo-Boolean optimization.
//!
//! Objectives whose elementary move gains are affine in a low-dimensional
//! feature map are optimized exactly by enumerating chambers of the
//! gain-predicate hyperplane arrangement and reconstructing candidate
//! supports per chamber. Brute-force oracles verify every result at desk
//! scale.

pub mod arrangement;
pub mod bits;
pub mod efd;
pub mod error;
pub mod hq;
pub mod instances;
pub mod lp;
pub mod oracle;
pub mod reconstruct;
pub mod solver;

pub use error::{CoreError, Result};

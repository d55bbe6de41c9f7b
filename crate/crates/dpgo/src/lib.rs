//! Distributed pose-graph optimization with optimality certificates.
//!
//! The rank-restricted semidefinite relaxation of pose-graph optimization is
//! solved by Riemannian block-coordinate descent inside a Riemannian
//! staircase, and the result is verified with a minimum-eigenvalue test on
//! the dual certificate. [`netsim`] replays the same computation as a set of
//! message-passing agents.

pub mod certify;
pub mod cli;
pub mod error;
pub mod manifold;
pub mod netsim;
pub mod objective;
pub mod posegraph;
pub mod rbcd;
pub mod sparse;

pub use error::{Error, Result};

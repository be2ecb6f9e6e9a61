//! Scenario files, Monte-Carlo sweeps, the toy training experiment and the
//! command-line front end of the allocator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod cli;
pub mod error;
pub mod montecarlo;
pub mod parallel;
pub mod scenario;
pub mod toy;

pub use error::{Error, Result};

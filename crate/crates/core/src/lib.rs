//! Nonbipartite matching for instrument-strengthening pair designs.
//!
//! A cohort is split into exact-match strata. Within each stratum the
//! pairing problem is written as a 0-1 integer program over pair
//! variables (degree rows, fine and near-fine balance, pair caps, mean
//! balance, forced instrument separation) and solved exactly by
//! branch-and-bound on a bounded-variable simplex relaxation. Matched
//! pairs are then analysed with McNemar-type randomization tests,
//! attributable-effect tests and Γ-sensitivity bounds.

// argument checks are written `!(x >= 0.0)` so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cohort;
pub mod config;
pub mod diagnostics;
pub mod distance;
mod error;
pub mod exec;
pub mod inference;
pub mod ipmodel;
pub mod pipeline;
pub mod solver;
pub mod synthetic;

pub use error::{Error, Result};

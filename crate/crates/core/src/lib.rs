//! Brownian motion on the Heisenberg group: group geometry, horizontal paths,
//! hypoelliptic diffusions, small-tube estimators and sub-Riemannian geodesics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod geodesics;
pub mod group;
pub mod paths;
pub mod rng;
mod sir;
pub mod stats;
pub mod stochastics;
pub mod validate;

pub use error::{Error, Result};

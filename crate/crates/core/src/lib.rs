//! Simulation and estimation for random walks in i.i.d. random environments
//! on Cayley trees of free products of `Z` and `Z_2`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod branching;
pub mod config;
pub mod environment;
pub mod error;
pub mod group;
pub mod oracle;
pub mod regeneration;
pub mod runner;
pub mod seeds;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};

//! Simulator and analysis toolkit for federated learning with β-stochastic
//! sign compression, mobile Byzantine clients and sign-based aggregation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod aggregation;
pub mod analysis;
pub mod cli;
pub mod compressor;
pub mod error;
pub mod orchestrator;
pub mod rng;
pub mod tasks;

pub use error::{Error, Result};

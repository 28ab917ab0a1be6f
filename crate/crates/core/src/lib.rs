//! Flatness-based neural architecture search at desk scale.
//!
//! Architectures are scored by how flat and how deep the validation-loss
//! minimum of their weight-shared subnet is, searched with an evolutionary
//! loop over cell genotypes, and checked against a from-scratch ground-truth
//! table with Kendall's tau.

pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evolution;
pub mod metrics;
pub mod nn;
mod par;
pub mod searchspace;
pub mod seed;
pub mod supernet;

pub use error::{Error, Result};
pub use searchspace::{Genotype, Op, SearchSpaceSpec};

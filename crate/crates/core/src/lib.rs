//! Salience-aware learning for table-based fact verification, at a scale
//! that trains on a laptop CPU.
//!
//! The pipeline: a synthetic table/statement generator ([`synthgen`]), a
//! table linearizer ([`encoder`]), a small transformer with a verification
//! head and a weight-tied masked-token head ([`network`]), counterfactual
//! token salience ([`salience`]), salience-guided augmentation
//! ([`augmentor`]), the training stages ([`trainer`]) and evaluation
//! ([`eval`]). [`pipeline`] and [`cli`] run the stages over a working
//! directory.

pub mod augmentor;
pub mod cli;
pub mod config;
pub mod datamodel;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod network;
pub mod pipeline;
pub mod salience;
pub mod synthgen;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};

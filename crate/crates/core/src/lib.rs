//! Learning Bayesian networks over relational data.
//!
//! The pipeline runs in stages: [`schema`] turns a dataset's key structure
//! into par-RVs, [`count`] produces contingency tables with negated
//! relationships, [`model`] fits and scores conditional probability tables,
//! [`learn`] searches structures and [`predict`] classifies entities.

pub mod count;
pub mod dataset;
pub mod error;
pub mod learn;
pub mod model;
pub mod predict;
pub mod schema;
pub mod synth;

pub use error::{Error, Result};

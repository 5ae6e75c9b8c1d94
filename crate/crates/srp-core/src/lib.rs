//! Predictive modeling over relational databases.
//!
//! The pipeline turns a multi-table database with primary/foreign keys into a
//! single supervised learning problem on a designated target column:
//!
//! 1. [`rdb`] loads and validates the database and produces temporal splits.
//! 2. [`synthesis`] flattens related tables into per-row features by walking
//!    FK-PK paths and aggregating row groups.
//! 3. [`retrieval`] links each row to its most similar rows under an
//!    inverse-frequency match score and materializes those links as ordinary
//!    tables, so every downstream stage sees plain relational data.
//! 4. [`graph`] turns the (augmented) database into a typed graph and samples
//!    fixed-fanout neighborhoods around target rows.
//! 5. [`encoding`] fits train-split feature encoders (z-score, one-hot,
//!    weighted frequency vectors, text vectors).
//! 6. [`nn`] + [`propagation`] provide a small reverse-mode autodiff core and
//!    relation-typed message-passing layers over sampled neighborhoods.
//! 7. [`model`] fuses the flat-feature branch with the graph branch, trains
//!    with Adam and early stopping, and ships evaluation/ablation/search
//!    harnesses.
//! 8. [`synthgen`] generates synthetic benchmark databases with planted,
//!    independently tunable signals.

pub mod encoding;
pub mod graph;
pub mod model;
pub mod nn;
pub mod propagation;
pub mod rdb;
pub mod retrieval;
pub mod synthesis;
pub mod synthgen;

#[cfg(test)]
pub(crate) mod fixtures;

//! Average treatment effect estimation for observational studies.
//!
//! Estimator families: cross-fitted regression adjustment with debiasing
//! shifts ([`lins`]), Horvitz-Thompson, Hajek and augmented IPW
//! ([`weighting`]), and bias-corrected caliper matching on rank-based
//! Mahalanobis distance ([`matching`]). [`ingest`] turns survey answers into
//! a [`Dataset`]; [`simulation`] generates data with known effects.

pub mod cli;
pub mod data;
pub mod error;
pub mod ingest;
pub mod lins;
pub mod matching;
pub mod models;
pub mod seed;
pub mod simulation;
pub mod stats;
pub mod weighting;

pub use data::{
    split_random, split_random_min, validate_dataset, CsvRoles, Dataset, EstimateResult, FoldSplit,
    Oracle, ValidationReport,
};
pub use error::{Error, Result};

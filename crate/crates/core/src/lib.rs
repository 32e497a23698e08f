//! Passive-surveillance screening engine for patient-message cohorts.
//!
//! The pipeline runs: corpus ingestion and matched cohort assembly ->
//! taxonomy-driven annotation -> heterogeneous graph construction -> dual
//! attribution (message-passing network event deltas + elastic-net
//! permutation scores) -> temporal proximity scoring and risk tiers -> a
//! hybrid high-specificity screener -> windowed screening simulation with
//! temporal validation blocks.

pub mod config;
pub mod corpus;
pub mod embed;
pub mod enlasso;
pub mod error;
pub mod gnn;
pub mod hetgraph;
pub mod scoring;
pub mod screener;
pub mod simulator;
pub mod stats;
pub mod taxonomy;

pub use error::{Error, Result};

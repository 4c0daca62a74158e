//! Budget-constrained entity resolution over dirty record collections.
//!
//! Records are embedded, linked into a K-nearest-neighbour graph and
//! clustered by weighted label propagation. Uncertain records can be sent to
//! a pairwise-matching oracle; queries are admitted by an online-knapsack
//! threshold so total spend stays within a monetary budget.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod embed;
pub mod engine;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod oracle;
pub mod planted;
pub mod records;
pub mod rng;
pub mod select;

pub use engine::{run, run_with, RunConfig, RunResult};
pub use error::{Error, Result};
pub use records::{load_ground_truth, load_records, Dataset, GroundTruth, Record, RecordFormat};

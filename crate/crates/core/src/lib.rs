//! Risk-aware top-k collaborative ranking.
//!
//! A user's top-k recommendation is treated as a choice under uncertainty: a ranked
//! k-lottery over unobserved items is built from latent item features, an adaptive
//! similarity-based utility is shaped by an exponential risk indicator, and the
//! expected utility is maximized greedily. Risk-seeking (`a < 0`), risk-neutral
//! (`a = 0`) and risk-averse (`a > 0`) strategies fall out of a single parameter.
//!
//! The crate also carries the benchmark pipeline around the ranking engine:
//! rating ingestion, seeded train/test splits, weighted non-negative matrix
//! factorization, ranking metrics and an end-to-end experiment runner.

pub mod error;
pub mod evaluate;
pub mod factorize;
pub mod harness;
pub mod ingest;
pub mod preference;
pub mod select;
pub mod split;
pub mod utility;

pub use error::{Error, Result};

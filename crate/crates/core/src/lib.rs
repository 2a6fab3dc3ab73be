//! Heterogeneous treatment effect estimation toolkit.
//!
//! Meta-learners (S, T, X, MO, R) over interchangeable regression base
//! learners, a simplified honest causal forest, average-effect estimators
//! with cluster-bootstrap intervals, signed-rank sensitivity bounds, and the
//! multi-estimator stability workflow built on the per-unit estimate matrix.

pub mod analysis;
pub mod ate;
pub mod base_learners;
pub mod causal_forest;
pub mod data;
pub mod dgp;
pub mod error;
pub mod meta_learners;
pub mod nuisance;
pub mod seeding;
pub mod sensitivity;
pub mod stability;
pub mod stats;

pub use error::{Error, Result};

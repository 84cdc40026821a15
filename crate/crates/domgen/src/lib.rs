//! Two-stage domain-generalization trainer for multi-environment tabular
//! data.
//!
//! The library trains a small feed-forward classifier on data collected from
//! several environments (hospitals, sites, scanners, ...) so that it keeps
//! working when the environment shifts. Stage 1 penalises the variance of
//! per-environment risks on top of their mean, pushing the model toward
//! features whose predictive power is stable across environments; stage 2
//! fine-tunes on convex mixtures of example pairs drawn across environments,
//! smoothing decision boundaries between domains.
//!
//! Everything is deterministic given a run seed: datasets, batches, weight
//! init, mixing draws, logs and reports reproduce byte for byte.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod guide;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod seeding;
pub mod trainer;

pub use error::{Error, Result};

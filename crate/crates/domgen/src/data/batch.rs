//! Environment-stratified batching.
//!
//! Every optimisation step must see one batch from *every* environment —
//! the variance penalty needs all per-environment risks at each step.
//! Environments differ in size, so one of them paces the epoch: the first
//! largest environment is chunked sequentially (its last batch may be
//! short and it contributes each example exactly once), while every other
//! environment cycles through its own shuffled order with wrap-around,
//! always contributing a full batch.

use rand::seq::SliceRandom;

use crate::data::Environment;
use crate::error::{Error, Result};
use crate::seeding;

/// Indices of one environment's batch within a step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvBatch {
    /// Position of the environment in the input slice.
    pub env: usize,
    pub indices: Vec<usize>,
}

/// One optimisation step's worth of batches: exactly one per environment,
/// in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGroup {
    pub env_batches: Vec<EnvBatch>,
}

/// Plan one epoch of batch groups over `envs`.
///
/// Steps per epoch = `ceil(max env size / batch_size)`. Each environment is
/// shuffled independently from `epoch_seed`, so the same seed reproduces
/// the same plan and different epochs get different orders.
pub fn stratified_batches(
    envs: &[Environment],
    batch_size: usize,
    epoch_seed: u64,
) -> Result<Vec<BatchGroup>> {
    if envs.is_empty() {
        return Err(Error::invalid("stratified_batches: no environments".to_string()));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1".to_string()));
    }

    let mut rng = seeding::rng(epoch_seed);
    let perms: Vec<Vec<usize>> = envs
        .iter()
        .map(|env| {
            let mut p: Vec<usize> = (0..env.len()).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();

    // First environment of maximal size paces the epoch.
    let pace = (0..envs.len())
        .max_by_key(|&i| (envs[i].len(), std::cmp::Reverse(i)))
        .expect("nonempty env list");
    let pace_len = envs[pace].len();
    let steps = pace_len.div_ceil(batch_size);

    let mut groups = Vec::with_capacity(steps);
    for s in 0..steps {
        let mut env_batches = Vec::with_capacity(envs.len());
        for (e, perm) in perms.iter().enumerate() {
            let indices: Vec<usize> = if e == pace {
                perm[s * batch_size..pace_len.min((s + 1) * batch_size)].to_vec()
            } else {
                let n = perm.len();
                (0..batch_size).map(|k| perm[(s * batch_size + k) % n]).collect()
            };
            env_batches.push(EnvBatch { env: e, indices });
        }
        groups.push(BatchGroup { env_batches });
    }
    Ok(groups)
}

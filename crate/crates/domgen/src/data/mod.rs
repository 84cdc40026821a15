//! Multi-environment datasets: representation, CSV interchange, synthetic
//! generation, and environment-stratified batching.

pub mod batch;
pub mod csv;
pub mod synth;

pub use batch::{stratified_batches, BatchGroup, EnvBatch};
pub use synth::{generate_spurious_environments, SpuriousSpec, SyntheticDataset};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Borrowed view of one labeled example.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: &'a [f64],
    pub label: usize,
    pub domain_id: u32,
}

/// One data source: a domain id plus its labeled feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    domain_id: u32,
    feature_dim: usize,
    rows: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl Environment {
    /// Build an environment, checking that it is nonempty and rectangular.
    pub fn new(domain_id: u32, rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid(format!("environment {domain_id} is empty")));
        }
        if rows.len() != labels.len() {
            return Err(Error::invalid(format!(
                "environment {domain_id}: {} feature rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let feature_dim = rows[0].len();
        if feature_dim == 0 {
            return Err(Error::invalid(format!(
                "environment {domain_id}: zero-width feature rows"
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != feature_dim {
                return Err(Error::invalid(format!(
                    "environment {domain_id}: row {i} has {} features, expected {feature_dim}",
                    row.len()
                )));
            }
        }
        Ok(Environment {
            domain_id,
            feature_dim,
            rows,
            labels,
        })
    }

    pub fn domain_id(&self) -> u32 {
        self.domain_id
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn example(&self, i: usize) -> Example<'_> {
        Example {
            features: &self.rows[i],
            label: self.labels[i],
            domain_id: self.domain_id,
        }
    }

    /// Count of examples per class; `labels` outside `0..num_classes` are
    /// rejected at bundle/CSV construction, so indexing here is safe.
    pub fn class_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0usize; num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Materialize the selected examples as a `[len × feature_dim]` tensor
    /// plus their labels, in the given order.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let mut values = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(&self.rows[i]);
            labels.push(self.labels[i]);
        }
        let t = Tensor::matrix(indices.len(), self.feature_dim, values)
            .expect("gather dimensions are consistent by construction");
        (t, labels)
    }

    /// All examples as one batch, in storage order.
    pub fn all(&self) -> (Tensor, Vec<usize>) {
        let indices: Vec<usize> = (0..self.len()).collect();
        self.gather(&indices)
    }
}

/// Training and validation environments with their shared schema.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    train_envs: Vec<Environment>,
    val_envs: Vec<Environment>,
    feature_dim: usize,
    num_classes: usize,
}

impl DatasetBundle {
    /// Validates: at least two training environments (the variance penalty
    /// is undefined over one), a uniform feature width, in-range labels, and
    /// unique domain ids per split.
    pub fn new(
        train_envs: Vec<Environment>,
        val_envs: Vec<Environment>,
        num_classes: usize,
    ) -> Result<Self> {
        if train_envs.len() < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 training environments, got {}",
                train_envs.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        let feature_dim = train_envs[0].feature_dim();
        for (split, envs) in [("train", &train_envs), ("val", &val_envs)] {
            let mut seen = std::collections::BTreeSet::new();
            for env in envs.iter() {
                if env.feature_dim() != feature_dim {
                    return Err(Error::invalid(format!(
                        "{split} environment {} has feature_dim {}, expected {feature_dim}",
                        env.domain_id(),
                        env.feature_dim()
                    )));
                }
                if !seen.insert(env.domain_id()) {
                    return Err(Error::invalid(format!(
                        "duplicate domain id {} in {split} environments",
                        env.domain_id()
                    )));
                }
                if let Some(&bad) = env.labels().iter().find(|&&l| l >= num_classes) {
                    return Err(Error::invalid(format!(
                        "{split} environment {} contains label {bad}, valid range is 0..{num_classes}",
                        env.domain_id()
                    )));
                }
            }
        }
        Ok(DatasetBundle {
            train_envs,
            val_envs,
            feature_dim,
            num_classes,
        })
    }

    pub fn train_envs(&self) -> &[Environment] {
        &self.train_envs
    }

    pub fn val_envs(&self) -> &[Environment] {
        &self.val_envs
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn n_train_examples(&self) -> usize {
        self.train_envs.iter().map(|e| e.len()).sum()
    }

    pub fn n_val_examples(&self) -> usize {
        self.val_envs.iter().map(|e| e.len()).sum()
    }

    /// Per-class counts summed over a split's environments.
    pub fn split_class_counts(&self, envs: &[Environment]) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for env in envs {
            for (c, n) in counts.iter_mut().zip(env.class_counts(self.num_classes)) {
                *c += n;
            }
        }
        counts
    }
}

/// One-hot rows for hard labels: `[len × num_classes]`.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    if labels.is_empty() {
        return Err(Error::invalid("one_hot: empty label list".to_string()));
    }
    let mut values = vec![0.0; labels.len() * num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::invalid(format!(
                "one_hot: label {l} at index {i} out of range 0..{num_classes}"
            )));
        }
        values[i * num_classes + l] = 1.0;
    }
    Tensor::matrix(labels.len(), num_classes, values)
}

//! Convex-mixture fine-tuning: pairs of examples are blended feature-wise
//! and label-wise, and the model trains on the blends with soft-target
//! cross-entropy. Pairs preferentially span two different domains so the
//! blends sit between sources, smoothing the decision boundary there.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Beta;

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::data::{Environment, Example};
use crate::error::{Error, Result};
use crate::model::{self, TracedParams};
use crate::seeding;

/// How the two members of a mixture pair are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// Both members drawn uniformly from the pooled training set.
    Any,
    /// Members drawn from two distinct environments.
    CrossDomain,
}

impl Pairing {
    pub fn name(self) -> &'static str {
        match self {
            Pairing::Any => "any",
            Pairing::CrossDomain => "cross_domain",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "any" => Ok(Pairing::Any),
            "cross_domain" => Ok(Pairing::CrossDomain),
            _ => Err(Error::invalid(format!(
                "unknown pairing `{s}` (expected any or cross_domain)"
            ))),
        }
    }
}

/// Mixture sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixupConfig {
    /// Concentration of the Beta(alpha, alpha) law for the blend weight.
    /// Small values favour near-endpoint blends; large values favour
    /// midpoints.
    pub alpha: f64,
    pub pairing: Pairing,
}

impl Default for MixupConfig {
    fn default() -> Self {
        MixupConfig {
            alpha: 0.2,
            pairing: Pairing::CrossDomain,
        }
    }
}

impl MixupConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!(
                "mixup alpha must be a positive finite number, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Blend two examples: features `lam·a + (1−lam)·b` and a soft label with
/// weight `lam` on `a`'s class and `1−lam` on `b`'s. At `lam` 1 or 0 the
/// output is exactly the corresponding endpoint.
pub fn mixup_pair(
    a: Example<'_>,
    b: Example<'_>,
    lam: f64,
    num_classes: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.features.len() != b.features.len() {
        return Err(Error::ShapeMismatch {
            op: "mixup_pair",
            lhs: vec![a.features.len()],
            rhs: vec![b.features.len()],
        });
    }
    if !(0.0..=1.0).contains(&lam) {
        return Err(Error::invalid(format!(
            "blend weight must lie in [0, 1], got {lam}"
        )));
    }
    if a.label >= num_classes || b.label >= num_classes {
        return Err(Error::invalid(format!(
            "labels {} and {} must be < {num_classes}",
            a.label, b.label
        )));
    }
    let features = a
        .features
        .iter()
        .zip(b.features)
        .map(|(&x, &y)| lam * x + (1.0 - lam) * y)
        .collect();
    let mut soft_label = vec![0.0; num_classes];
    soft_label[a.label] += lam;
    soft_label[b.label] += 1.0 - lam;
    Ok((features, soft_label))
}

/// A batch of blended examples: features `[B × d]`, soft labels `[B × C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub features: Tensor,
    pub soft_labels: Tensor,
}

impl MixedBatch {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draw one pair of (environment, example) addresses under `pairing`.
fn draw_pair(
    rng: &mut ChaCha8Rng,
    envs: &[Environment],
    pairing: Pairing,
) -> ((usize, usize), (usize, usize)) {
    let total: usize = envs.iter().map(|e| e.len()).sum();
    let lookup = |mut k: usize| -> (usize, usize) {
        for (e, env) in envs.iter().enumerate() {
            if k < env.len() {
                return (e, k);
            }
            k -= env.len();
        }
        unreachable!("pooled index within total")
    };
    let first = lookup(rng.random_range(0..total));
    let second = match pairing {
        Pairing::Any => lookup(rng.random_range(0..total)),
        Pairing::CrossDomain => {
            // Uniform over every example outside the first member's
            // environment.
            let others = total - envs[first.0].len();
            let mut k = rng.random_range(0..others);
            let mut found = None;
            for (e, env) in envs.iter().enumerate() {
                if e == first.0 {
                    continue;
                }
                if k < env.len() {
                    found = Some((e, k));
                    break;
                }
                k -= env.len();
            }
            found.expect("index within the other environments")
        }
    };
    (first, second)
}

/// Sample a batch of blended pairs, deterministically per `step_seed`.
///
/// Each pair draws its members uniformly (under `config.pairing`) and its
/// own blend weight from Beta(alpha, alpha).
pub fn sample_mixup_batch(
    envs: &[Environment],
    batch_size: usize,
    num_classes: usize,
    config: &MixupConfig,
    step_seed: u64,
) -> Result<MixedBatch> {
    config.validate()?;
    if envs.is_empty() {
        return Err(Error::invalid(
            "mixture sampling needs at least one environment".to_string(),
        ));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1".to_string()));
    }
    if config.pairing == Pairing::CrossDomain && envs.len() < 2 {
        return Err(Error::invalid(
            "cross_domain pairing needs at least 2 environments".to_string(),
        ));
    }
    let d = envs[0].feature_dim();
    for env in envs {
        if env.feature_dim() != d {
            return Err(Error::invalid(format!(
                "environment {} has feature_dim {} but environment {} has {}",
                env.domain_id(),
                env.feature_dim(),
                envs[0].domain_id(),
                d
            )));
        }
    }
    let beta = Beta::new(config.alpha, config.alpha)
        .map_err(|e| Error::invalid(format!("invalid mixup alpha {}: {e}", config.alpha)))?;

    let mut rng = seeding::rng(step_seed);
    let mut features = Vec::with_capacity(batch_size * d);
    let mut soft_labels = Vec::with_capacity(batch_size * num_classes);
    for _ in 0..batch_size {
        let ((ea, ia), (eb, ib)) = draw_pair(&mut rng, envs, config.pairing);
        let lam: f64 = rng.sample(beta);
        let (f, s) = mixup_pair(
            envs[ea].example(ia),
            envs[eb].example(ib),
            lam,
            num_classes,
        )?;
        features.extend_from_slice(&f);
        soft_labels.extend_from_slice(&s);
    }
    Ok(MixedBatch {
        features: Tensor::matrix(batch_size, d, features)?,
        soft_labels: Tensor::matrix(batch_size, num_classes, soft_labels)?,
    })
}

/// Soft-target cross-entropy of the model on a blended batch.
pub fn mixed_loss(tape: &mut Tape, traced: &TracedParams, batch: &MixedBatch) -> Result<NodeId> {
    let x = tape.constant(batch.features.clone());
    let logits = model::forward(tape, traced, x)?;
    tape.softmax_cross_entropy(logits, &batch.soft_labels)
}

//! Risk-variance objective: mean of per-environment risks plus a scaled
//! variance penalty, with a linear penalty warmup schedule.

use crate::autodiff::{NodeId, Tape, VarianceMode};
use crate::data::{one_hot, BatchGroup, Environment};
use crate::error::{Error, Result};
use crate::model::{self, TracedParams};

/// Penalty schedule and variance estimator choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VrexConfig {
    /// Final weight of the variance penalty.
    pub lambda_max: f64,
    /// Epochs over which the weight ramps linearly from 0 to `lambda_max`;
    /// 0 means the full weight applies from the first epoch.
    pub warmup_epochs: usize,
    pub variance_mode: VarianceMode,
}

impl Default for VrexConfig {
    fn default() -> Self {
        VrexConfig {
            lambda_max: 100.0,
            warmup_epochs: 10,
            variance_mode: VarianceMode::Population,
        }
    }
}

impl VrexConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_max >= 0.0) {
            return Err(Error::invalid(format!(
                "lambda_max must be >= 0, got {}",
                self.lambda_max
            )));
        }
        Ok(())
    }
}

/// Penalty weight at `epoch`: `lambda_max · min(1, epoch/warmup_epochs)`.
pub fn lambda_at_epoch(config: &VrexConfig, epoch: usize) -> f64 {
    if config.warmup_epochs == 0 {
        return config.lambda_max;
    }
    let frac = (epoch as f64 / config.warmup_epochs as f64).min(1.0);
    config.lambda_max * frac
}

/// Per-environment scalar losses on one tape, in environment order.
#[derive(Debug, Clone)]
pub struct RiskVector {
    risks: Vec<NodeId>,
}

impl RiskVector {
    /// Wrap per-environment loss nodes; requires at least two environments
    /// and scalar nodes.
    pub fn new(tape: &Tape, risks: Vec<NodeId>) -> Result<Self> {
        if risks.len() < 2 {
            return Err(Error::invalid(format!(
                "risk vector needs >= 2 environments, got {}",
                risks.len()
            )));
        }
        for (i, &r) in risks.iter().enumerate() {
            if !tape.shape(r).is_empty() {
                return Err(Error::invalid(format!(
                    "risk {i} is not a scalar (shape {:?})",
                    tape.shape(r)
                )));
            }
        }
        Ok(RiskVector { risks })
    }

    pub fn len(&self) -> usize {
        self.risks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.risks.is_empty()
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.risks
    }

    /// Current loss values, one per environment.
    pub fn values(&self, tape: &Tape) -> Vec<f64> {
        self.risks
            .iter()
            .map(|&r| tape.value(r).scalar_value().expect("risks are scalars"))
            .collect()
    }
}

/// Cross-entropy risk of the model on each environment's batch of the
/// group, in environment order.
pub fn per_environment_risks(
    tape: &mut Tape,
    traced: &TracedParams,
    envs: &[Environment],
    group: &BatchGroup,
    num_classes: usize,
) -> Result<RiskVector> {
    if group.env_batches.len() != envs.len() {
        return Err(Error::invalid(format!(
            "batch group covers {} environments but {} were given",
            group.env_batches.len(),
            envs.len()
        )));
    }
    let mut risks = Vec::with_capacity(envs.len());
    for (i, eb) in group.env_batches.iter().enumerate() {
        if eb.env != i {
            return Err(Error::invalid(format!(
                "batch group out of order: position {i} holds environment {}",
                eb.env
            )));
        }
        let (features, labels) = envs[i].gather(&eb.indices);
        let targets = one_hot(&labels, num_classes)?;
        let x = tape.constant(features);
        let logits = model::forward(tape, traced, x)?;
        risks.push(tape.softmax_cross_entropy(logits, &targets)?);
    }
    RiskVector::new(tape, risks)
}

/// The objective's pieces: `objective = mean + lambda · variance`.
/// `variance` is absent when `lambda == 0` — the objective then *is* the
/// mean node, so a zero penalty collapses to plain risk averaging bitwise.
#[derive(Debug, Clone, Copy)]
pub struct VrexTerms {
    pub objective: NodeId,
    pub mean: NodeId,
    pub variance: Option<NodeId>,
}

impl VrexTerms {
    pub fn mean_value(&self, tape: &Tape) -> f64 {
        tape.value(self.mean).scalar_value().expect("scalar mean")
    }

    pub fn variance_value(&self, tape: &Tape) -> Option<f64> {
        self.variance
            .map(|v| tape.value(v).scalar_value().expect("scalar variance"))
    }

    pub fn objective_value(&self, tape: &Tape) -> f64 {
        tape.value(self.objective)
            .scalar_value()
            .expect("scalar objective")
    }
}

/// Mean of the risks plus `lambda` times their variance.
pub fn vrex_objective(
    tape: &mut Tape,
    risks: &RiskVector,
    lambda: f64,
    mode: VarianceMode,
) -> Result<VrexTerms> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!(
            "variance penalty weight must be >= 0, got {lambda}"
        )));
    }
    let stacked = tape.stack_scalars(risks.nodes())?;
    let mean = tape.reduce_mean(stacked)?;
    if lambda == 0.0 {
        return Ok(VrexTerms {
            objective: mean,
            mean,
            variance: None,
        });
    }
    let variance = tape.variance(stacked, mode)?;
    let scaled = tape.scale(variance, lambda);
    let objective = tape.add(mean, scaled)?;
    Ok(VrexTerms {
        objective,
        mean,
        variance: Some(variance),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::data::stratified_batches;
    use crate::model::{init_params, InitScheme, Layer, ModelConfig, ModelParams};
    use proptest::prelude::*;

    const LN_2: f64 = 0.693_147_180_559_945_3;

    fn risk_leaves(tape: &mut Tape, values: &[f64]) -> RiskVector {
        let nodes: Vec<NodeId> = values
            .iter()
            .map(|&v| tape.leaf(Tensor::scalar(v), true))
            .collect();
        RiskVector::new(tape, nodes).unwrap()
    }

    #[test]
    fn schedule_ramps_linearly_and_saturates() {
        let config = VrexConfig {
            lambda_max: 10.0,
            warmup_epochs: 10,
            ..VrexConfig::default()
        };
        assert_eq!(lambda_at_epoch(&config, 0), 0.0);
        assert_eq!(lambda_at_epoch(&config, 5), 5.0);
        assert_eq!(lambda_at_epoch(&config, 10), 10.0);
        assert_eq!(lambda_at_epoch(&config, 99), 10.0);

        let instant = VrexConfig {
            lambda_max: 7.5,
            warmup_epochs: 0,
            ..VrexConfig::default()
        };
        assert_eq!(lambda_at_epoch(&instant, 0), 7.5);
        assert_eq!(lambda_at_epoch(&instant, 3), 7.5);
    }

    #[test]
    fn zero_variance_risks_give_their_common_value() {
        let mut tape = Tape::new();
        let risks = risk_leaves(&mut tape, &[0.5, 0.5, 0.5, 0.5]);
        for lambda in [0.0, 0.5, 100.0] {
            let terms =
                vrex_objective(&mut tape, &risks, lambda, VarianceMode::Population).unwrap();
            assert_eq!(terms.objective_value(&tape), 0.5);
        }
    }

    #[test]
    fn hand_objective_value() {
        // Risks [0, 2]: mean 1, population variance 1; λ = 0.5 → 1.5.
        let mut tape = Tape::new();
        let risks = risk_leaves(&mut tape, &[0.0, 2.0]);
        let terms = vrex_objective(&mut tape, &risks, 0.5, VarianceMode::Population).unwrap();
        assert_eq!(terms.objective_value(&tape), 1.5);
        assert_eq!(terms.mean_value(&tape), 1.0);
        assert_eq!(terms.variance_value(&tape), Some(1.0));
    }

    #[test]
    fn hand_gradient_identity() {
        // d/dL_i [mean + λ·var] = 1/n + λ(2/n)(L_i − L̄). Risks [0,2], λ=1:
        // gradients [0.5 + 2/2·(0−1), 0.5 + 2/2·(2−1)] = [−0.5, 1.5].
        let mut tape = Tape::new();
        let risks = risk_leaves(&mut tape, &[0.0, 2.0]);
        let terms = vrex_objective(&mut tape, &risks, 1.0, VarianceMode::Population).unwrap();
        let grads = tape.backward(terms.objective).unwrap();
        let g0 = grads.wrt(risks.nodes()[0]).scalar_value().unwrap();
        let g1 = grads.wrt(risks.nodes()[1]).scalar_value().unwrap();
        assert!((g0 - (-0.5)).abs() < 1e-12, "{g0}");
        assert!((g1 - 1.5).abs() < 1e-12, "{g1}");
    }

    #[test]
    fn zero_lambda_collapses_to_the_mean_node() {
        // With λ = 0 the objective must *be* the mean of the same stacked
        // risks — value and gradients bitwise equal to plain averaging.
        let values = [0.83, 0.12, 1.9, 0.44];
        let mut tape = Tape::new();
        let risks = risk_leaves(&mut tape, &values);
        let terms = vrex_objective(&mut tape, &risks, 0.0, VarianceMode::Population).unwrap();
        assert!(terms.variance.is_none());
        assert_eq!(terms.objective, terms.mean);

        let mut ref_tape = Tape::new();
        let ref_risks = risk_leaves(&mut ref_tape, &values);
        let stacked = ref_tape.stack_scalars(ref_risks.nodes()).unwrap();
        let mean = ref_tape.reduce_mean(stacked).unwrap();
        assert_eq!(
            terms.objective_value(&tape).to_bits(),
            ref_tape.value(mean).scalar_value().unwrap().to_bits()
        );

        let grads = tape.backward(terms.objective).unwrap();
        let ref_grads = ref_tape.backward(mean).unwrap();
        for (&r, &rr) in risks.nodes().iter().zip(ref_risks.nodes()) {
            let a = grads.wrt(r).scalar_value().unwrap();
            let b = ref_grads.wrt(rr).scalar_value().unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn negative_lambda_is_rejected() {
        let mut tape = Tape::new();
        let risks = risk_leaves(&mut tape, &[0.1, 0.2]);
        assert!(vrex_objective(&mut tape, &risks, -1e-9, VarianceMode::Population).is_err());
        assert!(VrexConfig {
            lambda_max: -1.0,
            ..VrexConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn risk_vector_needs_two_scalar_environments() {
        let mut tape = Tape::new();
        let one = tape.leaf(Tensor::scalar(0.3), true);
        assert!(RiskVector::new(&tape, vec![one]).is_err());
        let vec_node = tape.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        assert!(RiskVector::new(&tape, vec![one, vec_node]).is_err());
    }

    fn two_identical_envs() -> Vec<Environment> {
        let rows = vec![vec![1.0, -1.0], vec![0.5, 2.0], vec![-0.25, 0.0]];
        let labels = vec![0, 1, 0];
        vec![
            Environment::new(0, rows.clone(), labels.clone()).unwrap(),
            Environment::new(1, rows, labels).unwrap(),
        ]
    }

    #[test]
    fn zero_model_risks_are_ln_two() {
        let params = ModelParams::from_layers(vec![Layer {
            w: Tensor::zeros(vec![2, 2]),
            b: Tensor::zeros(vec![2]),
        }])
        .unwrap();
        let envs = two_identical_envs();
        let groups = stratified_batches(&envs, 3, 7).unwrap();
        let mut tape = Tape::new();
        let traced = params.trace(&mut tape);
        let risks = per_environment_risks(&mut tape, &traced, &envs, &groups[0], 2).unwrap();
        assert_eq!(risks.len(), 2);
        for v in risks.values(&tape) {
            assert!((v - LN_2).abs() < 1e-15, "{v}");
        }
    }

    #[test]
    fn identical_batches_give_equal_risks() {
        let config = ModelConfig {
            input_dim: 2,
            hidden_dims: vec![4],
            num_classes: 2,
            init_scheme: InitScheme::He,
            seed: 21,
        };
        let params = init_params(&config).unwrap();
        let envs = two_identical_envs();
        // Same indices in both environments → identical batches.
        let group = BatchGroup {
            env_batches: vec![
                crate::data::EnvBatch {
                    env: 0,
                    indices: vec![0, 1, 2],
                },
                crate::data::EnvBatch {
                    env: 1,
                    indices: vec![0, 1, 2],
                },
            ],
        };
        let mut tape = Tape::new();
        let traced = params.trace(&mut tape);
        let risks = per_environment_risks(&mut tape, &traced, &envs, &group, 2).unwrap();
        let v = risks.values(&tape);
        assert_eq!(v[0].to_bits(), v[1].to_bits());
    }

    #[test]
    fn group_environment_mismatch_is_rejected() {
        let params = ModelParams::from_layers(vec![Layer {
            w: Tensor::zeros(vec![2, 2]),
            b: Tensor::zeros(vec![2]),
        }])
        .unwrap();
        let envs = two_identical_envs();
        let short = BatchGroup {
            env_batches: vec![crate::data::EnvBatch {
                env: 0,
                indices: vec![0],
            }],
        };
        let mut tape = Tape::new();
        let traced = params.trace(&mut tape);
        assert!(per_environment_risks(&mut tape, &traced, &envs, &short, 2).is_err());
    }

    proptest! {
        #[test]
        fn objective_is_permutation_invariant(
            mut values in proptest::collection::vec(0.0f64..5.0, 2..6),
            lambda in 0.0f64..10.0,
        ) {
            let mut tape = Tape::new();
            let risks = risk_leaves(&mut tape, &values);
            let terms = vrex_objective(&mut tape, &risks, lambda, VarianceMode::Population).unwrap();
            let forward = terms.objective_value(&tape);

            values.reverse();
            let mut tape2 = Tape::new();
            let risks2 = risk_leaves(&mut tape2, &values);
            let terms2 = vrex_objective(&mut tape2, &risks2, lambda, VarianceMode::Population).unwrap();
            let reversed = terms2.objective_value(&tape2);
            prop_assert!((forward - reversed).abs() < 1e-12);
        }

        #[test]
        fn gradient_identity_holds_generally(
            values in proptest::collection::vec(0.0f64..5.0, 2..6),
            lambda in 0.0f64..10.0,
        ) {
            let n = values.len() as f64;
            let mean: f64 = values.iter().sum::<f64>() / n;
            let mut tape = Tape::new();
            let risks = risk_leaves(&mut tape, &values);
            let terms = vrex_objective(&mut tape, &risks, lambda, VarianceMode::Population).unwrap();
            let grads = tape.backward(terms.objective).unwrap();
            for (i, &r) in risks.nodes().iter().enumerate() {
                let got = grads.wrt(r).scalar_value().unwrap();
                let want = 1.0 / n + lambda * (2.0 / n) * (values[i] - mean);
                prop_assert!((got - want).abs() < 1e-8, "{got} vs {want}");
            }
        }
    }
}

//! Parameter update rules: plain gradient descent and bias-corrected
//! adaptive moments.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{ModelGrads, ModelParams};

/// Which update rule drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::invalid(format!(
                "unknown optimizer `{s}` (expected sgd or adam)"
            ))),
        }
    }
}

/// Moment-decay rates and the denominators' numeric floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::invalid(format!(
                "adam betas must lie in [0, 1), got ({b1}, {b2})"
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid(format!(
                "adam eps must be > 0, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Per-layer first/second moment estimates for weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMoments {
    pub m_w: Tensor,
    pub v_w: Tensor,
    pub m_b: Tensor,
    pub v_b: Tensor,
}

/// Mutable optimizer state carried across steps (and checkpoints).
///
/// `step` counts every invocation, including ones with all-zero gradients:
/// bias correction depends on it.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: u64,
    /// Present for adam (one entry per layer); empty for sgd.
    pub moments: Vec<LayerMoments>,
}

impl OptimizerState {
    /// Fresh state with zero moments shaped like `params`.
    pub fn new(kind: OptimizerKind, params: &ModelParams) -> Self {
        let moments = match kind {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adam => params
                .layers()
                .iter()
                .map(|l| LayerMoments {
                    m_w: Tensor::zeros(l.w.shape().to_vec()),
                    v_w: Tensor::zeros(l.w.shape().to_vec()),
                    m_b: Tensor::zeros(l.b.shape().to_vec()),
                    v_b: Tensor::zeros(l.b.shape().to_vec()),
                })
                .collect(),
        };
        OptimizerState {
            kind,
            step: 0,
            moments,
        }
    }
}

fn check_keyed(params: &ModelParams, grads: &ModelGrads) -> Result<()> {
    if grads.layers.len() != params.layers().len() {
        return Err(Error::invalid(format!(
            "gradient has {} layers but model has {}",
            grads.layers.len(),
            params.layers().len()
        )));
    }
    for (k, (layer, (gw, gb))) in params.layers().iter().zip(&grads.layers).enumerate() {
        if gw.shape() != layer.w.shape() || gb.shape() != layer.b.shape() {
            return Err(Error::invalid(format!(
                "layer {k}: gradient shapes {:?}/{:?} do not match parameter shapes {:?}/{:?}",
                gw.shape(),
                gb.shape(),
                layer.w.shape(),
                layer.b.shape()
            )));
        }
    }
    Ok(())
}

/// Apply one update in place. Deterministic; `state.step` always advances.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &ModelGrads,
    state: &mut OptimizerState,
    lr: f64,
    adam: &AdamConfig,
) -> Result<()> {
    check_keyed(params, grads)?;
    if !(lr > 0.0) {
        return Err(Error::invalid(format!("learning rate must be > 0, got {lr}")));
    }
    state.step += 1;
    match state.kind {
        OptimizerKind::Sgd => {
            for (layer, (gw, gb)) in params.layers_mut().iter_mut().zip(&grads.layers) {
                sgd_update(layer.w.values_mut(), gw.values(), lr);
                sgd_update(layer.b.values_mut(), gb.values(), lr);
            }
        }
        OptimizerKind::Adam => {
            adam.validate()?;
            let t = state.step;
            for (layer, (moments, (gw, gb))) in params
                .layers_mut()
                .iter_mut()
                .zip(state.moments.iter_mut().zip(&grads.layers))
            {
                adam_update(
                    layer.w.values_mut(),
                    gw.values(),
                    moments.m_w.values_mut(),
                    moments.v_w.values_mut(),
                    lr,
                    adam,
                    t,
                );
                adam_update(
                    layer.b.values_mut(),
                    gb.values(),
                    moments.m_b.values_mut(),
                    moments.v_b.values_mut(),
                    lr,
                    adam,
                    t,
                );
            }
        }
    }
    Ok(())
}

fn sgd_update(p: &mut [f64], g: &[f64], lr: f64) {
    for (pi, &gi) in p.iter_mut().zip(g) {
        *pi -= lr * gi;
    }
}

fn adam_update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    config: &AdamConfig,
    t: u64,
) {
    let (b1, b2) = config.betas;
    let bias1 = 1.0 - b1.powi(t as i32);
    let bias2 = 1.0 - b2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + config.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layer;

    fn one_param(value: f64) -> ModelParams {
        ModelParams::from_layers(vec![Layer {
            w: Tensor::matrix(1, 2, vec![value, value]).unwrap(),
            b: Tensor::vector(vec![value, value]),
        }])
        .unwrap()
    }

    fn grads_of(value: f64, params: &ModelParams) -> ModelGrads {
        ModelGrads {
            layers: params
                .layers()
                .iter()
                .map(|l| {
                    (
                        Tensor::matrix(
                            l.w.shape()[0],
                            l.w.shape()[1],
                            vec![value; l.w.len()],
                        )
                        .unwrap(),
                        Tensor::vector(vec![value; l.b.len()]),
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn sgd_one_step_arithmetic() {
        let mut params = one_param(1.0);
        let grads = grads_of(0.5, &params);
        let mut state = OptimizerState::new(OptimizerKind::Sgd, &params);
        optimizer_step(&mut params, &grads, &mut state, 0.1, &AdamConfig::default()).unwrap();
        for &v in params.layers()[0].w.values() {
            assert_eq!(v, 0.95);
        }
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradients_leave_params_fixed_but_advance_the_step() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut params = one_param(0.75);
            let before = params.clone();
            let grads = grads_of(0.0, &params);
            let mut state = OptimizerState::new(kind, &params);
            optimizer_step(&mut params, &grads, &mut state, 0.01, &AdamConfig::default())
                .unwrap();
            optimizer_step(&mut params, &grads, &mut state, 0.01, &AdamConfig::default())
                .unwrap();
            assert_eq!(params, before);
            assert_eq!(state.step, 2);
        }
    }

    #[test]
    fn adam_first_step_is_approximately_lr() {
        // First step with g = 0.5: m̂ = g, v̂ = g², so the update is
        // −lr·g/(|g| + eps) ≈ −lr.
        let mut params = one_param(1.0);
        let grads = grads_of(0.5, &params);
        let mut state = OptimizerState::new(OptimizerKind::Adam, &params);
        optimizer_step(&mut params, &grads, &mut state, 0.001, &AdamConfig::default()).unwrap();
        for &v in params.layers()[0].w.values() {
            assert!((v - (1.0 - 0.001)).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn adam_step_direction_follows_gradient_sign() {
        let mut params = one_param(0.0);
        let grads = ModelGrads {
            layers: vec![(
                Tensor::matrix(1, 2, vec![3.0, -0.25]).unwrap(),
                Tensor::vector(vec![0.0, 0.0]),
            )],
        };
        let mut state = OptimizerState::new(OptimizerKind::Adam, &params);
        optimizer_step(&mut params, &grads, &mut state, 0.001, &AdamConfig::default()).unwrap();
        let w = params.layers()[0].w.values();
        assert!(w[0] < 0.0 && w[1] > 0.0, "{w:?}");
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let mut params = one_param(1.0);
        let mut state = OptimizerState::new(OptimizerKind::Sgd, &params);
        let empty = ModelGrads { layers: vec![] };
        assert!(
            optimizer_step(&mut params, &empty, &mut state, 0.1, &AdamConfig::default()).is_err()
        );
        let wrong_shape = ModelGrads {
            layers: vec![(Tensor::zeros(vec![2, 2]), Tensor::zeros(vec![2]))],
        };
        assert!(optimizer_step(
            &mut params,
            &wrong_shape,
            &mut state,
            0.1,
            &AdamConfig::default()
        )
        .is_err());
        // Neither failed attempt advanced the step counter.
        assert_eq!(state.step, 0);
    }

    #[test]
    fn bad_hyperparameters_are_rejected() {
        let mut params = one_param(1.0);
        let grads = grads_of(0.1, &params);
        let mut state = OptimizerState::new(OptimizerKind::Adam, &params);
        assert!(
            optimizer_step(&mut params, &grads, &mut state, 0.0, &AdamConfig::default()).is_err()
        );
        let bad = AdamConfig {
            betas: (1.0, 0.999),
            eps: 1e-8,
        };
        assert!(optimizer_step(&mut params, &grads, &mut state, 0.1, &bad).is_err());
        assert!(AdamConfig {
            betas: (0.9, 0.999),
            eps: 0.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn adam_is_deterministic_across_replays() {
        let run = || {
            let mut params = one_param(0.3);
            let mut state = OptimizerState::new(OptimizerKind::Adam, &params);
            for k in 0..10 {
                let grads = grads_of(0.1 * (k as f64 - 4.0), &params);
                optimizer_step(&mut params, &grads, &mut state, 0.01, &AdamConfig::default())
                    .unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }
}

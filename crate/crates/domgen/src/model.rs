//! Feed-forward classifier over tabular features.
//!
//! Plain affine→ReLU stacks with a final affine layer producing logits.
//! Parameters live outside any tape; each forward pass registers them as
//! gradient-tracked leaves on a fresh tape via [`ModelParams::trace`].

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Gradients, NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::seeding;

/// Weight initialisation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Normal with std √(2/fan_in); suits ReLU stacks.
    He,
    /// Uniform on ±√(6/(fan_in+fan_out)).
    Xavier,
}

impl InitScheme {
    pub fn name(self) -> &'static str {
        match self {
            InitScheme::He => "he",
            InitScheme::Xavier => "xavier",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "he" => Ok(InitScheme::He),
            "xavier" => Ok(InitScheme::Xavier),
            _ => Err(Error::invalid(format!(
                "unknown init scheme `{s}` (expected he or xavier)"
            ))),
        }
    }
}

/// Architecture and initialisation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub init_scheme: InitScheme,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 6,
            hidden_dims: vec![32, 32],
            num_classes: 2,
            init_scheme: InitScheme::He,
            seed: seeding::init_seed(42),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim must be >= 1".to_string()));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("hidden_dims must all be >= 1".to_string()));
        }
        Ok(())
    }

    /// Successive (in, out) dimensions of each affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.num_classes));
        dims
    }
}

/// One affine layer's parameters: weight `[in × out]` and bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Tensor,
    pub b: Tensor,
}

/// All layer parameters, input to output.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<Layer>,
}

impl ModelParams {
    /// Assemble from explicit layers, checking the dimension chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("model needs at least one layer".to_string()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.w.shape().len() != 2 || layer.b.shape().len() != 1 {
                return Err(Error::invalid(format!(
                    "layer {k}: weight must be rank 2 and bias rank 1"
                )));
            }
            if layer.w.shape()[1] != layer.b.shape()[0] {
                return Err(Error::ShapeMismatch {
                    op: "layer weight/bias",
                    lhs: layer.w.shape().to_vec(),
                    rhs: layer.b.shape().to_vec(),
                });
            }
            if k > 0 && layers[k - 1].w.shape()[1] != layer.w.shape()[0] {
                return Err(Error::ShapeMismatch {
                    op: "consecutive layers",
                    lhs: layers[k - 1].w.shape().to_vec(),
                    rhs: layer.w.shape().to_vec(),
                });
            }
        }
        Ok(ModelParams { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.shape()[0]
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().expect("nonempty").w.shape()[1]
    }

    /// Total scalar parameter count: Σ (inₖ·outₖ + outₖ).
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Register every parameter as a gradient-tracked leaf on `tape`.
    pub fn trace(&self, tape: &mut Tape) -> TracedParams {
        let layers = self
            .layers
            .iter()
            .map(|l| (tape.leaf(l.w.clone(), true), tape.leaf(l.b.clone(), true)))
            .collect();
        TracedParams { layers }
    }
}

/// Tape node ids of the traced parameters, layer by layer.
#[derive(Debug, Clone)]
pub struct TracedParams {
    layers: Vec<(NodeId, NodeId)>,
}

impl TracedParams {
    pub fn layers(&self) -> &[(NodeId, NodeId)] {
        &self.layers
    }

    /// Pull this trace's parameter gradients out of a backward result, in
    /// layer order.
    pub fn grads(&self, gradients: &Gradients) -> ModelGrads {
        ModelGrads {
            layers: self
                .layers
                .iter()
                .map(|&(w, b)| (gradients.wrt(w), gradients.wrt(b)))
                .collect(),
        }
    }
}

/// Gradient of a scalar loss with respect to every model parameter.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub layers: Vec<(Tensor, Tensor)>,
}

/// Seeded parameter initialisation: weights from `config.init_scheme`,
/// biases zero. Deterministic per `config.seed`.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = seeding::rng(config.seed);
    let mut layers = Vec::new();
    for (fan_in, fan_out) in config.layer_dims() {
        let n = fan_in * fan_out;
        let values: Vec<f64> = match config.init_scheme {
            InitScheme::He => {
                let std = (2.0 / fan_in as f64).sqrt();
                (0..n)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        std * z
                    })
                    .collect()
            }
            InitScheme::Xavier => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-limit..limit)).collect()
            }
        };
        layers.push(Layer {
            w: Tensor::matrix(fan_in, fan_out, values)?,
            b: Tensor::zeros(vec![fan_out]),
        });
    }
    ModelParams::from_layers(layers)
}

/// Forward pass on `tape`: affine → ReLU through the hidden layers, final
/// affine without activation. Returns the logits node `[B × num_classes]`.
pub fn forward(tape: &mut Tape, traced: &TracedParams, batch: NodeId) -> Result<NodeId> {
    let mut x = batch;
    let last = traced.layers.len() - 1;
    for (k, &(w, b)) in traced.layers.iter().enumerate() {
        x = tape.matmul(x, w)?;
        x = tape.add_bias(x, b)?;
        if k < last {
            x = tape.relu(x);
        }
    }
    Ok(x)
}

/// Class predictions for a batch: argmax over logits per row, ties broken
/// toward the lower class index.
pub fn predict(params: &ModelParams, batch: &Tensor) -> Result<Vec<usize>> {
    let mut tape = Tape::new();
    let x = tape.constant(batch.clone());
    let traced = params.trace(&mut tape);
    let logits = forward(&mut tape, &traced, x)?;
    let z = tape.value(logits);
    let mut out = Vec::with_capacity(z.rows());
    for r in 0..z.rows() {
        let row = z.row(r);
        let mut best = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        out.push(best);
    }
    Ok(out)
}

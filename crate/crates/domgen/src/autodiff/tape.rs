use crate::autodiff::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Index of a node on a [`Tape`]. Ids are only meaningful for the tape that
/// produced them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Which variance estimator `Tape::variance` computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceMode {
    /// Divide by `n`. This is the estimator used in the variance penalty,
    /// matching its gradient identity `(2/n)(xᵢ - x̄)`.
    Population,
    /// Divide by `n - 1`.
    Sample,
}

impl VarianceMode {
    pub fn name(self) -> &'static str {
        match self {
            VarianceMode::Population => "population",
            VarianceMode::Sample => "sample",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "population" => Ok(VarianceMode::Population),
            "sample" => Ok(VarianceMode::Sample),
            _ => Err(Error::invalid(format!(
                "unknown variance mode `{s}` (expected population or sample)"
            ))),
        }
    }
}

/// How a node's value was produced; inputs are ids of earlier nodes.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    /// Row-broadcast add: `x` is `[batch × d]`, `bias` is `[d]`.
    AddBias { x: NodeId, bias: NodeId },
    Relu { a: NodeId },
    Scale { a: NodeId, factor: f64 },
    /// Mean softmax cross-entropy over the batch. `targets` are constants
    /// (one row per example, each a probability vector); `softmax` caches the
    /// forward probabilities for the backward pass.
    SoftmaxCrossEntropy { logits: NodeId, targets: Tensor, softmax: Tensor },
    ReduceMean { a: NodeId },
    Variance { a: NodeId, mode: VarianceMode },
    StackScalars { parts: Vec<NodeId> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Each operation pushes one node, so the vector order is already a
/// topological order and [`Tape::backward`] is a single reverse sweep. One
/// tape corresponds to one forward pass; training builds a fresh tape per
/// step rather than mutating values in place.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value computed at `id`.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Shape of the node at `id`.
    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Insert an input node. Gradients are tracked through it only when
    /// `requires_grad` is set; pass `false` for data batches and constants.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Constant input; alias for `leaf(value, false)`.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    /// Matrix product of two rank-2 nodes.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let ok = va.shape().len() == 2 && vb.shape().len() == 2 && va.shape()[1] == vb.shape()[0];
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let value = matmul(va, vb);
        let rg = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(value, Op::Matmul { a, b }, rg))
    }

    /// Elementwise sum of two nodes with identical shapes.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut value = va.clone();
        value.add_assign(vb);
        let rg = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    /// Add a rank-1 bias to every row of a rank-2 node.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let ok = vx.shape().len() == 2 && vb.shape().len() == 1 && vx.shape()[1] == vb.shape()[0];
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: vx.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (rows, cols) = (vx.shape()[0], vx.shape()[1]);
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(vx.at(r, c) + vb.values()[c]);
            }
        }
        let value = Tensor::matrix(rows, cols, values)?;
        let rg = self.needs_grad(x) || self.needs_grad(bias);
        Ok(self.push(value, Op::AddBias { x, bias }, rg))
    }

    /// Elementwise `max(0, x)`. The derivative at exactly 0 is taken as 0.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.needs_grad(a);
        self.push(value, Op::Relu { a }, rg)
    }

    /// Multiply every element by a constant.
    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = self.value(a).map(|v| v * factor);
        let rg = self.needs_grad(a);
        self.push(value, Op::Scale { a, factor }, rg)
    }

    /// Mean over the batch of softmax cross-entropy against `targets`.
    ///
    /// `logits` is `[batch × classes]`; `targets` must match its shape and
    /// every target row must be a probability vector (sum 1 within 1e-9).
    /// Log-sum-exp is computed with per-row max subtraction, so extreme
    /// logits stay finite instead of overflowing `exp`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: &Tensor) -> Result<NodeId> {
        let z = self.value(logits);
        if z.shape().len() != 2 || targets.shape() != z.shape() {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: z.shape().to_vec(),
                rhs: targets.shape().to_vec(),
            });
        }
        let (batch, classes) = (z.shape()[0], z.shape()[1]);
        if batch == 0 || classes == 0 {
            return Err(Error::invalid(
                "softmax_cross_entropy: empty batch or zero classes".to_string(),
            ));
        }
        for r in 0..batch {
            let sum: f64 = targets.row(r).iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "softmax_cross_entropy: target row {r} sums to {sum}, expected 1"
                )));
            }
        }

        let mut probs = Vec::with_capacity(batch * classes);
        let mut total = 0.0;
        for r in 0..batch {
            let row = z.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &v in row {
                denom += (v - m).exp();
            }
            let lse = m + denom.ln();
            let mut dot = 0.0;
            for (c, &v) in row.iter().enumerate() {
                probs.push((v - m).exp() / denom);
                dot += targets.at(r, c) * v;
            }
            total += lse - dot;
        }
        let loss = total / batch as f64;
        let softmax = Tensor::matrix(batch, classes, probs)?;
        let rg = self.needs_grad(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.clone(),
                softmax,
            },
            rg,
        ))
    }

    /// Mean of all elements, as a scalar node.
    pub fn reduce_mean(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(Error::invalid("reduce_mean: empty input".to_string()));
        }
        let mean = va.iter().sum::<f64>() / va.len() as f64;
        let rg = self.needs_grad(a);
        Ok(self.push(Tensor::scalar(mean), Op::ReduceMean { a }, rg))
    }

    /// Variance of a rank-1 node, as a scalar node. Requires length >= 2.
    pub fn variance(&mut self, a: NodeId, mode: VarianceMode) -> Result<NodeId> {
        let va = self.value(a);
        if va.shape().len() != 1 || va.len() < 2 {
            return Err(Error::invalid(format!(
                "variance needs a vector of length >= 2, got shape {:?}",
                va.shape()
            )));
        }
        let n = va.len() as f64;
        let mean = va.iter().sum::<f64>() / n;
        let ss: f64 = va.iter().map(|v| (v - mean) * (v - mean)).sum();
        let var = match mode {
            VarianceMode::Population => ss / n,
            VarianceMode::Sample => ss / (n - 1.0),
        };
        let rg = self.needs_grad(a);
        Ok(self.push(Tensor::scalar(var), Op::Variance { a, mode }, rg))
    }

    /// Pack scalar nodes into one rank-1 node, preserving order.
    pub fn stack_scalars(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::invalid("stack_scalars: empty input".to_string()));
        }
        let mut values = Vec::with_capacity(parts.len());
        for &p in parts {
            values.push(self.value(p).scalar_value()?);
        }
        let rg = parts.iter().any(|&p| self.needs_grad(p));
        Ok(self.push(
            Tensor::vector(values),
            Op::StackScalars {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `root`, returning the gradient of `root`
    /// with respect to every gradient-tracked node.
    ///
    /// The tape itself is immutable here; a second `backward` on the same
    /// tape returns identical results. Nodes the root does not depend on get
    /// zero gradients.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_val = self.value(root);
        if !root_val.is_scalar() {
            return Err(Error::NonScalarRoot {
                shape: root_val.shape().to_vec(),
            });
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for id in (0..=root.0).rev() {
            if !self.nodes[id].requires_grad {
                grads[id] = None; // no tracked leaf below; drop any grad
                continue;
            }
            let Some(g) = grads[id].clone() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    if self.needs_grad(*a) {
                        let da = matmul_nt(&g, self.value(*b));
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs_grad(*b) {
                        let db = matmul_tn(self.value(*a), &g);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add { a, b } => {
                    if self.needs_grad(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs_grad(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddBias { x, bias } => {
                    if self.needs_grad(*bias) {
                        let cols = g.shape()[1];
                        let mut db = vec![0.0; cols];
                        for r in 0..g.shape()[0] {
                            for (c, acc) in db.iter_mut().enumerate() {
                                *acc += g.at(r, c);
                            }
                        }
                        accumulate(&mut grads, *bias, Tensor::vector(db));
                    }
                    if self.needs_grad(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Relu { a } => {
                    if self.needs_grad(*a) {
                        let input = self.value(*a);
                        let masked = Tensor::new(
                            g.shape().to_vec(),
                            g.values()
                                .iter()
                                .zip(input.values())
                                .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                                .collect(),
                        )?;
                        accumulate(&mut grads, *a, masked);
                    }
                }
                Op::Scale { a, factor } => {
                    if self.needs_grad(*a) {
                        accumulate(&mut grads, *a, g.map(|v| v * factor));
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    targets,
                    softmax,
                } => {
                    if self.needs_grad(*logits) {
                        let gv = g.scalar_value()?;
                        let batch = softmax.shape()[0] as f64;
                        let dz = Tensor::new(
                            softmax.shape().to_vec(),
                            softmax
                                .values()
                                .iter()
                                .zip(targets.values())
                                .map(|(&p, &t)| gv * (p - t) / batch)
                                .collect(),
                        )?;
                        accumulate(&mut grads, *logits, dz);
                    }
                }
                Op::ReduceMean { a } => {
                    if self.needs_grad(*a) {
                        let va = self.value(*a);
                        let gv = g.scalar_value()? / va.len() as f64;
                        accumulate(&mut grads, *a, va.map(|_| gv));
                    }
                }
                Op::Variance { a, mode } => {
                    if self.needs_grad(*a) {
                        let va = self.value(*a);
                        let n = va.len() as f64;
                        let mean = va.iter().sum::<f64>() / n;
                        let denom = match mode {
                            VarianceMode::Population => n,
                            VarianceMode::Sample => n - 1.0,
                        };
                        let gv = g.scalar_value()?;
                        let da = va.map(|v| gv * 2.0 * (v - mean) / denom);
                        accumulate(&mut grads, *a, da);
                    }
                }
                Op::StackScalars { parts } => {
                    for (i, &p) in parts.iter().enumerate() {
                        if self.needs_grad(p) {
                            accumulate(&mut grads, p, Tensor::scalar(g.values()[i]));
                        }
                    }
                }
            }
        }

        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
    match &mut grads[id.0] {
        Some(g) => g.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

/// Result of a backward sweep: gradient of the root per tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `id`, zero-filled if the root never touched
    /// it (or it was not gradient-tracked).
    pub fn wrt(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[id.0].clone()),
        }
    }

    /// Gradient if one was accumulated; `None` for untouched nodes.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN_2: f64 = 0.693_147_180_559_945_3;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn uniform_logits_cost_is_ln_num_classes() {
        // Closed form: equal logits over C classes give loss ln C regardless
        // of the target distribution.
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap(), true);
        let t = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let loss = tape.softmax_cross_entropy(z, &t).unwrap();
        assert_close(tape.value(loss).scalar_value().unwrap(), LN_2, 1e-15);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        // One row, logits [10, -10]. True class 0 (the confident one) gives
        // the closed form ln(1 + e^-20) ≈ 2.061e-9; true class 1 gives
        // 20 + ln(1 + e^-20). A naive exp path at ±1000 would overflow.
        let t0 = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let t1 = Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap();

        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::matrix(1, 2, vec![10.0, -10.0]).unwrap(), true);
        let loss = tape.softmax_cross_entropy(z, &t0).unwrap();
        let expect = (-20.0f64).exp().ln_1p();
        // (max + lse) - z0 cancels ~15 digits, so the achievable absolute
        // accuracy here is ~1e-15, far below the 2.06e-9 value itself.
        assert_close(tape.value(loss).scalar_value().unwrap(), expect, 1e-14);

        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::matrix(1, 2, vec![10.0, -10.0]).unwrap(), true);
        let loss = tape.softmax_cross_entropy(z, &t1).unwrap();
        let expect = 20.0 + (-20.0f64).exp().ln_1p();
        assert_close(tape.value(loss).scalar_value().unwrap(), expect, 1e-12);

        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::matrix(1, 2, vec![1000.0, -1000.0]).unwrap(), true);
        let loss = tape.softmax_cross_entropy(z, &t1).unwrap();
        let v = tape.value(loss).scalar_value().unwrap();
        assert!(v.is_finite());
        assert_close(v, 2000.0, 1e-9);
    }

    #[test]
    fn cross_entropy_is_shift_invariant() {
        // Adding a per-row constant to the logits leaves the loss unchanged.
        let t = Tensor::matrix(2, 3, vec![0.2, 0.5, 0.3, 1.0, 0.0, 0.0]).unwrap();
        let base = vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4];
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::matrix(2, 3, base.clone()).unwrap(), true);
        let l0 = tape.softmax_cross_entropy(z, &t).unwrap();
        let v0 = tape.value(l0).scalar_value().unwrap();

        let shifted: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(i, &v)| v + if i < 3 { 37.5 } else { -11.25 })
            .collect();
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::matrix(2, 3, shifted).unwrap(), true);
        let l1 = tape.softmax_cross_entropy(z, &t).unwrap();
        let v1 = tape.value(l1).scalar_value().unwrap();
        assert_close(v0, v1, 1e-10);
    }

    #[test]
    fn cross_entropy_rejects_bad_target_rows() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap(), true);
        let t = Tensor::matrix(1, 2, vec![0.7, 0.7]).unwrap();
        assert!(tape.softmax_cross_entropy(z, &t).is_err());
    }

    #[test]
    fn cross_entropy_backward_is_softmax_minus_target_over_batch() {
        // Uniform softmax (0 logits) minus one-hot targets, divided by the
        // batch size of 2.
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap(), true);
        let t = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let loss = tape.softmax_cross_entropy(z, &t).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gz = grads.wrt(z);
        let expect = [-0.25, 0.25, 0.25, -0.25];
        for (g, e) in gz.values().iter().zip(expect) {
            assert_close(*g, e, 1e-15);
        }
    }

    #[test]
    fn variance_modes_match_hand_values() {
        // x = [1, 2, 3, 4]: population variance 1.25, sample variance 5/3.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]), true);
        let pv = tape.variance(x, VarianceMode::Population).unwrap();
        let sv = tape.variance(x, VarianceMode::Sample).unwrap();
        assert_close(tape.value(pv).scalar_value().unwrap(), 1.25, 1e-15);
        assert_close(tape.value(sv).scalar_value().unwrap(), 5.0 / 3.0, 1e-15);
    }

    #[test]
    fn variance_backward_matches_identity() {
        // Population: d var / d xᵢ = (2/n)(xᵢ - x̄). For x = [-1, 1] that is
        // exactly [-1, 1].
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0, 1.0]), true);
        let v = tape.variance(x, VarianceMode::Population).unwrap();
        let grads = tape.backward(v).unwrap();
        assert_eq!(grads.wrt(x).values(), &[-1.0, 1.0]);

        // Sample divides by n - 1 = 1 instead: [-2, 2].
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0, 1.0]), true);
        let v = tape.variance(x, VarianceMode::Sample).unwrap();
        let grads = tape.backward(v).unwrap();
        assert_eq!(grads.wrt(x).values(), &[-2.0, 2.0]);
    }

    #[test]
    fn variance_requires_two_elements() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![3.0]), true);
        assert!(tape.variance(x, VarianceMode::Population).is_err());
    }

    #[test]
    fn matmul_hand_cases() {
        let mut tape = Tape::new();
        let m = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true);
        let eye = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let zero = tape.constant(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        let ones_col = tape.constant(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap());

        let id = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.value(id).values(), &[1.0, 2.0, 3.0, 4.0]);
        let z = tape.matmul(zero, m).unwrap();
        assert_eq!(tape.value(z).values(), &[0.0; 4]);
        let col = tape.matmul(m, ones_col).unwrap();
        assert_eq!(tape.value(col).values(), &[3.0, 7.0]);
    }

    #[test]
    fn mean_and_variance_hand_cases() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0, 6.0]), true);
        let m = tape.reduce_mean(x).unwrap();
        assert_eq!(tape.value(m).scalar_value().unwrap(), 3.0);

        let y = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]), true);
        let v = tape.variance(y, VarianceMode::Population).unwrap();
        assert_close(tape.value(v).scalar_value().unwrap(), 2.0 / 3.0, 1e-15);

        let c = tape.leaf(Tensor::vector(vec![1.0; 4]), true);
        let vc = tape.variance(c, VarianceMode::Population).unwrap();
        assert_eq!(tape.value(vc).scalar_value().unwrap(), 0.0);
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap(), true);
        let b = tape.leaf(Tensor::matrix(4, 2, vec![0.0; 8]).unwrap(), true);
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn relu_gradient_is_zero_at_zero_and_below() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]), true);
        let y = tape.relu(x);
        let m = tape.reduce_mean(y).unwrap();
        let grads = tape.backward(m).unwrap();
        assert_eq!(grads.wrt(x).values(), &[0.0, 0.0, 1.0 / 3.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, Error::NonScalarRoot { .. }));
    }

    #[test]
    fn untouched_and_untracked_leaves_get_zero_gradient() {
        let mut tape = Tape::new();
        let used = tape.leaf(Tensor::vector(vec![1.0, 3.0]), true);
        let unused = tape.leaf(Tensor::vector(vec![5.0, 5.0]), true);
        let frozen = tape.leaf(Tensor::vector(vec![2.0, 4.0]), false);
        let sum = tape.add(used, frozen).unwrap();
        let m = tape.reduce_mean(sum).unwrap();
        let grads = tape.backward(m).unwrap();
        assert_eq!(grads.wrt(used).values(), &[0.5, 0.5]);
        assert_eq!(grads.wrt(unused).values(), &[0.0, 0.0]);
        assert_eq!(grads.wrt(frozen).values(), &[0.0, 0.0]);
        assert!(grads.get(unused).is_none());
    }

    #[test]
    fn diamond_graph_accumulates_both_paths() {
        // y = mean(x + x): dy/dx = 2/n via two Add contributions.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        let s = tape.add(x, x).unwrap();
        let m = tape.reduce_mean(s).unwrap();
        let grads = tape.backward(m).unwrap();
        assert_eq!(grads.wrt(x).values(), &[1.0, 1.0]);
    }

    #[test]
    fn stack_scalars_routes_gradients_to_parts() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(2.0), true);
        let b = tape.leaf(Tensor::scalar(4.0), true);
        let stacked = tape.stack_scalars(&[a, b]).unwrap();
        assert_eq!(tape.value(stacked).values(), &[2.0, 4.0]);
        let v = tape.variance(stacked, VarianceMode::Population).unwrap();
        // var([2,4]) = 1; gradients (2/2)(xᵢ - 3) = [-1, 1].
        assert_eq!(tape.value(v).scalar_value().unwrap(), 1.0);
        let grads = tape.backward(v).unwrap();
        assert_eq!(grads.wrt(a).scalar_value().unwrap(), -1.0);
        assert_eq!(grads.wrt(b).scalar_value().unwrap(), 1.0);
    }

    #[test]
    fn backward_twice_gives_identical_results() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.5, -1.5, 2.0]), true);
        let v = tape.variance(x, VarianceMode::Population).unwrap();
        let g1 = tape.backward(v).unwrap();
        let g2 = tape.backward(v).unwrap();
        assert_eq!(g1.wrt(x).values(), g2.wrt(x).values());
    }

    #[test]
    fn add_bias_broadcasts_and_sums_gradient_over_rows() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true);
        let b = tape.leaf(Tensor::vector(vec![10.0, 20.0]), true);
        let y = tape.add_bias(x, b).unwrap();
        assert_eq!(tape.value(y).values(), &[11.0, 22.0, 13.0, 24.0]);
        let m = tape.reduce_mean(y).unwrap();
        let grads = tape.backward(m).unwrap();
        // d mean / d bias_c = (#rows) * (1/4) = 0.5 per column.
        assert_eq!(grads.wrt(b).values(), &[0.5, 0.5]);
        assert_eq!(grads.wrt(x).values(), &[0.25; 4]);
    }
}

//! The standard gradient-verification battery.
//!
//! One named case per tape operation plus a full two-hidden-layer MLP loss,
//! each checked against central finite differences on several independently
//! seeded random inputs (110 input sets in total). The battery backs both
//! the `gradcheck` command and the acceptance suite, so the cases and their
//! pass threshold live here rather than in either consumer.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::gradcheck::{grad_check, GradCheckReport};
use crate::autodiff::tape::{NodeId, Tape, VarianceMode};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::seeding;

/// Every case must come in under this maximum relative error.
pub const PASS_THRESHOLD: f64 = 1e-4;

/// Random input sets drawn per case.
pub const INPUTS_PER_CASE: usize = 10;

/// ReLU arguments (and hidden-layer pre-activations) are kept at least this
/// far from the kink at 0, where the analytic subgradient and a finite
/// difference legitimately disagree.
const KINK_MARGIN: f64 = 1e-3;

/// Worst disagreement a case saw across all its random inputs.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: &'static str,
    /// Input sets checked.
    pub inputs: usize,
    /// Gradient components compared in total.
    pub components: usize,
    pub max_rel_err: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < PASS_THRESHOLD
    }
}

fn normal_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let values: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), values).expect("shape matches value count")
}

/// Normal draws rejected within [`KINK_MARGIN`] of zero.
fn kink_safe_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let values: Vec<f64> = (0..n)
        .map(|_| loop {
            let v: f64 = rng.sample(StandardNormal);
            if v.abs() >= KINK_MARGIN {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), values).expect("shape matches value count")
}

/// Random rows on the probability simplex (valid soft targets).
fn simplex_tensor(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let mut values = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..cols).map(|_| rng.random_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        values.extend(raw.iter().map(|v| v / sum));
    }
    Tensor::matrix(rows, cols, values).expect("rows*cols values")
}

type Builder = Box<dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId>>;

/// Inputs plus the computation to differentiate at them. The builder is
/// rerun at perturbed inputs by the finite-difference probe.
struct Prepared {
    points: Vec<Tensor>,
    build: Builder,
}

/// Draw one random instance of the case. `rng` is seeded per (case, input).
fn prepare(name: &str, rng: &mut impl Rng) -> Prepared {
    match name {
        "matmul" => Prepared {
            points: vec![normal_tensor(rng, &[3, 4]), normal_tensor(rng, &[4, 2])],
            build: Box::new(|tape, ids| {
                let p = tape.matmul(ids[0], ids[1])?;
                tape.reduce_mean(p)
            }),
        },
        "add" => Prepared {
            points: vec![normal_tensor(rng, &[2, 3]), normal_tensor(rng, &[2, 3])],
            build: Box::new(|tape, ids| {
                let s = tape.add(ids[0], ids[1])?;
                tape.reduce_mean(s)
            }),
        },
        "add_bias" => Prepared {
            points: vec![normal_tensor(rng, &[3, 4]), normal_tensor(rng, &[4])],
            build: Box::new(|tape, ids| {
                let s = tape.add_bias(ids[0], ids[1])?;
                tape.reduce_mean(s)
            }),
        },
        "relu" => Prepared {
            points: vec![kink_safe_tensor(rng, &[10])],
            build: Box::new(|tape, ids| {
                let r = tape.relu(ids[0]);
                tape.reduce_mean(r)
            }),
        },
        "scale" => {
            let factor = rng.random_range(-2.0..2.0);
            Prepared {
                points: vec![normal_tensor(rng, &[6])],
                build: Box::new(move |tape, ids| {
                    let s = tape.scale(ids[0], factor);
                    tape.reduce_mean(s)
                }),
            }
        }
        "softmax_cross_entropy" => {
            let targets = simplex_tensor(rng, 4, 3);
            Prepared {
                points: vec![normal_tensor(rng, &[4, 3])],
                build: Box::new(move |tape, ids| tape.softmax_cross_entropy(ids[0], &targets)),
            }
        }
        "reduce_mean" => Prepared {
            points: vec![normal_tensor(rng, &[7])],
            build: Box::new(|tape, ids| tape.reduce_mean(ids[0])),
        },
        "variance_population" => Prepared {
            points: vec![normal_tensor(rng, &[5])],
            build: Box::new(|tape, ids| tape.variance(ids[0], VarianceMode::Population)),
        },
        "variance_sample" => Prepared {
            points: vec![normal_tensor(rng, &[5])],
            build: Box::new(|tape, ids| tape.variance(ids[0], VarianceMode::Sample)),
        },
        "stack_scalars" => Prepared {
            points: (0..4).map(|_| Tensor::scalar(rng.sample(StandardNormal))).collect(),
            build: Box::new(|tape, ids| {
                let stacked = tape.stack_scalars(ids)?;
                tape.variance(stacked, VarianceMode::Population)
            }),
        },
        "mlp_2_hidden" => prepare_mlp(rng),
        other => unreachable!("unknown case `{other}`"),
    }
}

/// Full classifier loss: x·W1+b1 → relu → ·W2+b2 → relu → ·W3+b3 →
/// softmax cross-entropy, differentiated with respect to all six parameter
/// tensors. Inputs are redrawn until every hidden pre-activation clears the
/// ReLU kink margin.
fn prepare_mlp(rng: &mut impl Rng) -> Prepared {
    const B: usize = 4;
    const D: usize = 6;
    const H: usize = 8;
    const C: usize = 2;
    loop {
        let x = normal_tensor(rng, &[B, D]);
        let targets = simplex_tensor(rng, B, C);
        let points = vec![
            normal_tensor(rng, &[D, H]),
            normal_tensor(rng, &[H]),
            normal_tensor(rng, &[H, H]),
            normal_tensor(rng, &[H]),
            normal_tensor(rng, &[H, C]),
            normal_tensor(rng, &[C]),
        ];

        // Probe the pre-activations at the drawn point.
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = points.iter().map(|p| tape.leaf(p.clone(), false)).collect();
        let xid = tape.constant(x.clone());
        let pre1 = {
            let p = tape.matmul(xid, ids[0]).expect("probe shapes");
            tape.add_bias(p, ids[1]).expect("probe shapes")
        };
        let h1 = tape.relu(pre1);
        let pre2 = {
            let p = tape.matmul(h1, ids[2]).expect("probe shapes");
            tape.add_bias(p, ids[3]).expect("probe shapes")
        };
        let near_kink = tape
            .value(pre1)
            .values()
            .iter()
            .chain(tape.value(pre2).values())
            .any(|v| v.abs() < KINK_MARGIN);
        if near_kink {
            continue;
        }

        return Prepared {
            points,
            build: Box::new(move |tape, ids| {
                let xid = tape.constant(x.clone());
                let p = tape.matmul(xid, ids[0])?;
                let p = tape.add_bias(p, ids[1])?;
                let h = tape.relu(p);
                let p = tape.matmul(h, ids[2])?;
                let p = tape.add_bias(p, ids[3])?;
                let h = tape.relu(p);
                let p = tape.matmul(h, ids[4])?;
                let logits = tape.add_bias(p, ids[5])?;
                tape.softmax_cross_entropy(logits, &targets)
            }),
        };
    }
}

pub const CASE_NAMES: [&str; 11] = [
    "matmul",
    "add",
    "add_bias",
    "relu",
    "scale",
    "softmax_cross_entropy",
    "reduce_mean",
    "variance_population",
    "variance_sample",
    "stack_scalars",
    "mlp_2_hidden",
];

/// Run one named case on [`INPUTS_PER_CASE`] inputs derived from `seed`.
pub fn run_case(name: &'static str, seed: u64, step: f64) -> Result<CaseResult> {
    if !CASE_NAMES.contains(&name) {
        return Err(Error::invalid(format!("unknown gradient-check case `{name}`")));
    }
    let case_index = CASE_NAMES.iter().position(|&n| n == name).unwrap() as u64;
    let mut result = CaseResult {
        name,
        inputs: INPUTS_PER_CASE,
        components: 0,
        max_rel_err: 0.0,
    };
    for input_index in 0..INPUTS_PER_CASE {
        let mut rng = seeding::rng(seeding::mix(&[seed, 0x6772_6164, case_index, input_index as u64]));
        let prepared = prepare(name, &mut rng);
        let report: GradCheckReport = grad_check(&prepared.build, &prepared.points, step)?;
        result.components += report.components;
        if report.max_rel_err > result.max_rel_err {
            result.max_rel_err = report.max_rel_err;
        }
    }
    Ok(result)
}

/// Run the whole battery. The result order matches [`CASE_NAMES`].
pub fn run_suite(seed: u64, step: f64) -> Result<Vec<CaseResult>> {
    CASE_NAMES
        .iter()
        .map(|&name| run_case(name, seed, step))
        .collect()
}

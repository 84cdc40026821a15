//! Central-difference verification of tape gradients.
//!
//! Builders are closures that lay a computation onto a fresh tape and return
//! its scalar root, so numeric probing can re-run the same computation at
//! perturbed inputs: each input component is nudged by `±step` and the slope
//! `(f(x+h) - f(x-h)) / 2h` is compared against the backward pass.

use crate::autodiff::tape::{NodeId, Tape};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Step size with a good bias/round-off balance for f64 central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over all components of all inputs.
    pub max_rel_err: f64,
    /// Input (by position) holding the worst component.
    pub worst_input: usize,
    /// Flat index of the worst component within that input.
    pub worst_index: usize,
    /// Total number of components compared.
    pub components: usize,
}

/// Relative error between an analytic and a numeric derivative, guarded so
/// that near-zero pairs compare on an absolute scale instead of dividing by
/// almost nothing.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

/// Gradient of `build`'s scalar root with respect to every input, estimated
/// by central differences with the given step.
pub fn numeric_gradients<F>(build: &F, points: &[Tensor], step: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    check_args(points, step)?;
    let eval = |pts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = pts.iter().map(|p| tape.leaf(p.clone(), true)).collect();
        let root = build(&mut tape, &ids)?;
        tape.value(root).scalar_value()
    };

    let mut out = Vec::with_capacity(points.len());
    let mut flat = 0usize;
    for (pi, point) in points.iter().enumerate() {
        let mut grad = vec![0.0; point.len()];
        for (ci, g) in grad.iter_mut().enumerate() {
            let mut plus = points.to_vec();
            plus[pi].values_mut()[ci] += step;
            let mut minus = points.to_vec();
            minus[pi].values_mut()[ci] -= step;
            let (fp, fm) = (eval(&plus)?, eval(&minus)?);
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite {
                    component: flat,
                    value: if fp.is_finite() { fm } else { fp },
                });
            }
            *g = (fp - fm) / (2.0 * step);
            flat += 1;
        }
        out.push(Tensor::new(point.shape().to_vec(), grad)?);
    }
    Ok(out)
}

/// Componentwise comparison of two gradient sets with matching shapes.
pub fn compare_gradients(analytic: &[Tensor], numeric: &[Tensor]) -> Result<GradCheckReport> {
    if analytic.len() != numeric.len() {
        return Err(Error::invalid(format!(
            "gradient sets differ in input count: {} vs {}",
            analytic.len(),
            numeric.len()
        )));
    }
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_input: 0,
        worst_index: 0,
        components: 0,
    };
    for (pi, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        if a.shape() != n.shape() {
            return Err(Error::ShapeMismatch {
                op: "compare_gradients",
                lhs: a.shape().to_vec(),
                rhs: n.shape().to_vec(),
            });
        }
        for (ci, (&av, &nv)) in a.values().iter().zip(n.values()).enumerate() {
            if !av.is_finite() || !nv.is_finite() {
                return Err(Error::NonFinite {
                    component: report.components,
                    value: if av.is_finite() { nv } else { av },
                });
            }
            let rel = relative_error(av, nv);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_input = pi;
                report.worst_index = ci;
            }
            report.components += 1;
        }
    }
    Ok(report)
}

/// Run `build` once for the analytic gradients and `2 × components` more
/// times for the numeric ones, and report the worst disagreement.
pub fn grad_check<F>(build: &F, points: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    check_args(points, step)?;
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = points.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let root = build(&mut tape, &ids)?;
    let value = tape.value(root).scalar_value()?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            component: 0,
            value,
        });
    }
    let grads = tape.backward(root)?;
    let analytic: Vec<Tensor> = ids.iter().map(|&id| grads.wrt(id)).collect();
    let numeric = numeric_gradients(build, points, step)?;
    compare_gradients(&analytic, &numeric)
}

fn check_args(points: &[Tensor], step: f64) -> Result<()> {
    if points.is_empty() {
        return Err(Error::invalid("grad_check: no input points".to_string()));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::invalid(format!(
            "grad_check: step must be positive and finite, got {step}"
        )));
    }
    Ok(())
}

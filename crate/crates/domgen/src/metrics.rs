//! Classification evaluation: confusion matrices, per-class F1, macro F1
//! per domain, and cross-domain averages.
//!
//! The headline number is the unweighted mean of per-domain macro F1 —
//! every domain counts equally regardless of its size. A size-weighted
//! mean and a pooled (merge-then-score) variant are also available.

use crate::data::Environment;
use crate::error::{Error, Result};
use crate::kv::fmt_f64;
use crate::model::{self, ModelParams};

/// Prediction tally: `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid(format!(
                "confusion matrix needs >= 2 classes, got {num_classes}"
            )));
        }
        Ok(ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Count of examples with true class `t` predicted as `p`.
    pub fn at(&self, t: usize, p: usize) -> u64 {
        self.counts[t * self.num_classes + p]
    }

    fn at_mut(&mut self, t: usize, p: usize) -> &mut u64 {
        &mut self.counts[t * self.num_classes + p]
    }

    /// Number of evaluated examples (sum of all cells).
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Merge another matrix of the same size into this one (pooling).
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::invalid(format!(
                "cannot merge a {}-class confusion matrix into a {}-class one",
                other.num_classes, self.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Fraction of examples on the diagonal.
    pub fn accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::invalid(
                "cannot score an empty confusion matrix".to_string(),
            ));
        }
        let hits: u64 = (0..self.num_classes).map(|c| self.at(c, c)).sum();
        Ok(hits as f64 / total as f64)
    }

    /// Per-class precision, recall, and F1, with every 0/0 defined as 0.
    pub fn per_class_f1(&self) -> Vec<ClassScore> {
        (0..self.num_classes)
            .map(|c| {
                let tp = self.at(c, c);
                let fp: u64 = (0..self.num_classes)
                    .filter(|&t| t != c)
                    .map(|t| self.at(t, c))
                    .sum();
                let fn_: u64 = (0..self.num_classes)
                    .filter(|&p| p != c)
                    .map(|p| self.at(c, p))
                    .sum();
                ClassScore::from_counts(tp, fp, fn_)
            })
            .collect()
    }

    /// Unweighted mean of per-class F1. Errors on an empty matrix.
    pub fn macro_f1(&self) -> Result<f64> {
        if self.total() == 0 {
            return Err(Error::invalid(
                "cannot score an empty confusion matrix".to_string(),
            ));
        }
        let scores = self.per_class_f1();
        Ok(scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64)
    }
}

/// Precision/recall/F1 for one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassScore {
    fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = ratio_or_zero(tp, tp + fp);
        let recall = ratio_or_zero(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassScore {
            precision,
            recall,
            f1,
        }
    }
}

fn ratio_or_zero(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Tally predictions against ground truth.
pub fn confusion(
    true_labels: &[usize],
    predicted_labels: &[usize],
    num_classes: usize,
) -> Result<ConfusionMatrix> {
    if true_labels.len() != predicted_labels.len() {
        return Err(Error::invalid(format!(
            "label lists differ in length: {} true vs {} predicted",
            true_labels.len(),
            predicted_labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(num_classes)?;
    for (i, (&t, &p)) in true_labels.iter().zip(predicted_labels).enumerate() {
        if t >= num_classes {
            return Err(Error::invalid(format!(
                "true label {t} at index {i} is out of range for {num_classes} classes"
            )));
        }
        if p >= num_classes {
            return Err(Error::invalid(format!(
                "predicted label {p} at index {i} is out of range for {num_classes} classes"
            )));
        }
        *cm.at_mut(t, p) += 1;
    }
    Ok(cm)
}

/// Unweighted mean of per-class F1 over a tally.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    cm.macro_f1()
}

/// One domain's evaluation results.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainEval {
    pub domain_id: u32,
    pub confusion: ConfusionMatrix,
    pub f1_per_class: Vec<f64>,
    pub macro_f1: f64,
}

impl DomainEval {
    pub fn n_examples(&self) -> u64 {
        self.confusion.total()
    }
}

/// Evaluation over one or more domains with cross-domain summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    per_domain: Vec<DomainEval>,
    average_macro_f1: f64,
}

impl EvalReport {
    /// Assemble from per-domain results; the headline average is the
    /// unweighted mean of per-domain macro F1.
    pub fn from_domains(per_domain: Vec<DomainEval>) -> Result<Self> {
        if per_domain.is_empty() {
            return Err(Error::invalid(
                "evaluation needs at least one domain".to_string(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &per_domain {
            if !seen.insert(d.domain_id) {
                return Err(Error::invalid(format!(
                    "duplicate domain id {} in evaluation",
                    d.domain_id
                )));
            }
        }
        let average_macro_f1 =
            per_domain.iter().map(|d| d.macro_f1).sum::<f64>() / per_domain.len() as f64;
        Ok(EvalReport {
            per_domain,
            average_macro_f1,
        })
    }

    pub fn per_domain(&self) -> &[DomainEval] {
        &self.per_domain
    }

    /// Unweighted mean of per-domain macro F1 (the headline number).
    pub fn average_macro_f1(&self) -> f64 {
        self.average_macro_f1
    }

    /// Mean of per-domain macro F1 weighted by domain size.
    pub fn weighted_average_macro_f1(&self) -> f64 {
        let total: u64 = self.per_domain.iter().map(|d| d.n_examples()).sum();
        self.per_domain
            .iter()
            .map(|d| d.macro_f1 * d.n_examples() as f64 / total as f64)
            .sum()
    }

    /// Macro F1 of all domains' tallies merged into one matrix.
    pub fn pooled_macro_f1(&self) -> Result<f64> {
        let mut pooled = self.per_domain[0].confusion.clone();
        for d in &self.per_domain[1..] {
            pooled.merge(&d.confusion)?;
        }
        pooled.macro_f1()
    }

    /// Human-readable summary mirroring the report fields.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for d in &self.per_domain {
            out.push_str(&format!(
                "domain {}: n={} macro_f1={}\n",
                d.domain_id,
                d.n_examples(),
                fmt_f64(d.macro_f1)
            ));
            for (c, f1) in d.f1_per_class.iter().enumerate() {
                out.push_str(&format!("  f1_class{c}={}\n", fmt_f64(*f1)));
            }
            let cm = &d.confusion;
            for t in 0..cm.num_classes() {
                let row: Vec<String> = (0..cm.num_classes())
                    .map(|p| cm.at(t, p).to_string())
                    .collect();
                out.push_str(&format!("  confusion_true{t}=[{}]\n", row.join(", ")));
            }
        }
        out.push_str(&format!(
            "average_macro_f1={}\n",
            fmt_f64(self.average_macro_f1)
        ));
        out.push_str(&format!(
            "weighted_average_macro_f1={}\n",
            fmt_f64(self.weighted_average_macro_f1())
        ));
        if let Ok(pooled) = self.pooled_macro_f1() {
            out.push_str(&format!("pooled_macro_f1={}\n", fmt_f64(pooled)));
        }
        out
    }

    /// Flat per-domain table. For two classes the header is exactly
    /// `domain_id,macro_f1,f1_class0,f1_class1,n`.
    pub fn render_csv(&self) -> String {
        let c = self.per_domain[0].f1_per_class.len();
        let mut out = String::from("domain_id,macro_f1");
        for k in 0..c {
            out.push_str(&format!(",f1_class{k}"));
        }
        out.push_str(",n\n");
        for d in &self.per_domain {
            out.push_str(&format!("{},{}", d.domain_id, fmt_f64(d.macro_f1)));
            for f1 in &d.f1_per_class {
                out.push_str(&format!(",{}", fmt_f64(*f1)));
            }
            out.push_str(&format!(",{}\n", d.n_examples()));
        }
        out
    }
}

/// Score a model on each environment, then across them.
pub fn evaluate(params: &ModelParams, envs: &[Environment]) -> Result<EvalReport> {
    if envs.is_empty() {
        return Err(Error::invalid(
            "evaluation needs at least one environment".to_string(),
        ));
    }
    let num_classes = params.num_classes();
    let mut per_domain = Vec::with_capacity(envs.len());
    for env in envs {
        if env.feature_dim() != params.input_dim() {
            return Err(Error::invalid(format!(
                "model expects input_dim {} but domain {} has feature_dim {}",
                params.input_dim(),
                env.domain_id(),
                env.feature_dim()
            )));
        }
        let (features, labels) = env.all();
        let predicted = model::predict(params, &features)?;
        let cm = confusion(&labels, &predicted, num_classes)?;
        let f1_per_class = cm.per_class_f1().iter().map(|s| s.f1).collect();
        let mf1 = cm.macro_f1()?;
        per_domain.push(DomainEval {
            domain_id: env.domain_id(),
            confusion: cm,
            f1_per_class,
            macro_f1: mf1,
        });
    }
    EvalReport::from_domains(per_domain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Layer, ModelParams};
    use crate::autodiff::Tensor;
    use proptest::prelude::*;

    fn cm_from(rows: &[&[u64]]) -> ConfusionMatrix {
        let c = rows.len();
        let mut cm = ConfusionMatrix::new(c).unwrap();
        for (t, row) in rows.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                *cm.at_mut(t, p) += n;
            }
        }
        cm
    }

    #[test]
    fn hand_tally() {
        let cm = confusion(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(cm.at(0, 0), 1);
        assert_eq!(cm.at(0, 1), 1);
        assert_eq!(cm.at(1, 0), 0);
        assert_eq!(cm.at(1, 1), 2);
        assert_eq!(cm.total(), 4);
    }

    #[test]
    fn perfect_predictions_are_diagonal_and_score_one() {
        let truth = [0, 1, 2, 1, 0, 2, 2];
        let cm = confusion(&truth, &truth, 3).unwrap();
        for t in 0..3 {
            for p in 0..3 {
                if t != p {
                    assert_eq!(cm.at(t, p), 0);
                }
            }
        }
        assert_eq!(cm.macro_f1().unwrap(), 1.0);
        assert_eq!(cm.accuracy().unwrap(), 1.0);
    }

    #[test]
    fn empty_inputs_tally_to_zero_and_refuse_to_score() {
        let cm = confusion(&[], &[], 2).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(cm.macro_f1().is_err());
        assert!(cm.accuracy().is_err());
    }

    #[test]
    fn hand_macro_f1() {
        // [[1,1],[0,2]]: class 0 has P=1, R=1/2 → F1=2/3; class 1 has
        // P=2/3, R=1 → F1=4/5; macro = 11/15.
        let cm = cm_from(&[&[1, 1], &[0, 2]]);
        let scores = cm.per_class_f1();
        assert!((scores[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((scores[1].f1 - 0.8).abs() < 1e-15);
        assert!((cm.macro_f1().unwrap() - 11.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_single_class_predictor() {
        // Everything predicted class 0 against 180 / 128 true counts:
        // F1 for class 0 is 360/488, class 1 gets 0, macro = 45/122.
        let cm = cm_from(&[&[180, 0], &[128, 0]]);
        let scores = cm.per_class_f1();
        assert!((scores[0].f1 - 360.0 / 488.0).abs() < 1e-12);
        assert_eq!(scores[1].precision, 0.0);
        assert_eq!(scores[1].recall, 0.0);
        assert_eq!(scores[1].f1, 0.0);
        let macro_f1 = cm.macro_f1().unwrap();
        assert!((macro_f1 - 45.0 / 122.0).abs() < 1e-12);
        assert!((macro_f1 - 0.36885245901639344).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_labels_name_the_index() {
        let err = confusion(&[0, 3], &[0, 1], 2).unwrap_err().to_string();
        assert!(err.contains("index 1"), "{err}");
        assert!(err.contains('3'), "{err}");
        let err = confusion(&[0, 1], &[2, 1], 2).unwrap_err().to_string();
        assert!(err.contains("index 0"), "{err}");
        assert!(confusion(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn report_average_is_unweighted_and_weighted_differs() {
        let a = DomainEval {
            domain_id: 0,
            confusion: cm_from(&[&[10, 0], &[0, 10]]),
            f1_per_class: vec![1.0, 1.0],
            macro_f1: 1.0,
        };
        let b = DomainEval {
            domain_id: 1,
            confusion: cm_from(&[&[1, 1], &[1, 1]]),
            f1_per_class: vec![0.5, 0.5],
            macro_f1: 0.5,
        };
        let report = EvalReport::from_domains(vec![a, b]).unwrap();
        assert!((report.average_macro_f1() - 0.75).abs() < 1e-15);
        // 20 examples at 1.0 and 4 at 0.5 → (20 + 2) / 24.
        assert!((report.weighted_average_macro_f1() - 22.0 / 24.0).abs() < 1e-15);
        let text = report.render_text();
        assert!(text.contains("average_macro_f1=0.75"), "{text}");
    }

    #[test]
    fn duplicate_domains_rejected() {
        let d = DomainEval {
            domain_id: 7,
            confusion: cm_from(&[&[1, 0], &[0, 1]]),
            f1_per_class: vec![1.0, 1.0],
            macro_f1: 1.0,
        };
        assert!(EvalReport::from_domains(vec![d.clone(), d]).is_err());
        assert!(EvalReport::from_domains(vec![]).is_err());
    }

    #[test]
    fn csv_header_and_rows_are_pinned() {
        let a = DomainEval {
            domain_id: 2,
            confusion: cm_from(&[&[3, 0], &[0, 1]]),
            f1_per_class: vec![1.0, 1.0],
            macro_f1: 1.0,
        };
        let b = DomainEval {
            domain_id: 0,
            confusion: cm_from(&[&[1, 1], &[0, 2]]),
            f1_per_class: vec![2.0 / 3.0, 0.8],
            macro_f1: 11.0 / 15.0,
        };
        let report = EvalReport::from_domains(vec![a, b]).unwrap();
        let csv = report.render_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "domain_id,macro_f1,f1_class0,f1_class1,n"
        );
        assert_eq!(lines.next().unwrap(), "2,1,1,1,4");
        let row = lines.next().unwrap();
        assert!(row.starts_with("0,0.73333333"), "{row}");
        assert!(row.ends_with(",4"), "{row}");
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn pooling_merges_tallies() {
        let a = DomainEval {
            domain_id: 0,
            confusion: cm_from(&[&[1, 1], &[0, 2]]),
            f1_per_class: vec![2.0 / 3.0, 0.8],
            macro_f1: 11.0 / 15.0,
        };
        let b = DomainEval {
            domain_id: 1,
            confusion: cm_from(&[&[5, 0], &[1, 3]]),
            f1_per_class: vec![0.0, 0.0],
            macro_f1: 0.0,
        };
        let report = EvalReport::from_domains(vec![a, b]).unwrap();
        // Pooled matrix [[6,1],[1,5]]: P0=6/7, R0=6/7, F1_0=6/7;
        // P1=5/6, R1=5/6, F1_1=5/6; macro = (6/7+5/6)/2 = 71/84.
        let pooled = report.pooled_macro_f1().unwrap();
        assert!((pooled - 71.0 / 84.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_scores_each_environment() {
        // Identity-ish model: predicts class 1 iff second feature is larger.
        let params = ModelParams::from_layers(vec![Layer {
            w: Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            b: Tensor::zeros(vec![2]),
        }])
        .unwrap();
        let perfect = Environment::new(
            0,
            vec![vec![2.0, 1.0], vec![0.0, 3.0]],
            vec![0, 1],
        )
        .unwrap();
        let inverted = Environment::new(
            1,
            vec![vec![0.0, 5.0], vec![4.0, 1.0]],
            vec![0, 1],
        )
        .unwrap();
        let report = evaluate(&params, &[perfect, inverted]).unwrap();
        assert_eq!(report.per_domain()[0].macro_f1, 1.0);
        assert_eq!(report.per_domain()[1].macro_f1, 0.0);
        assert!((report.average_macro_f1() - 0.5).abs() < 1e-15);

        // Single domain: average equals that domain's score.
        let single = Environment::new(
            3,
            vec![vec![2.0, 1.0], vec![0.0, 3.0]],
            vec![0, 1],
        )
        .unwrap();
        let report = evaluate(&params, &[single]).unwrap();
        assert_eq!(report.average_macro_f1(), report.per_domain()[0].macro_f1);
    }

    #[test]
    fn evaluate_reports_width_mismatch_with_both_dims() {
        let params = ModelParams::from_layers(vec![Layer {
            w: Tensor::zeros(vec![6, 2]),
            b: Tensor::zeros(vec![2]),
        }])
        .unwrap();
        let env = Environment::new(0, vec![vec![0.0; 4]], vec![0]).unwrap();
        let err = evaluate(&params, &[env]).unwrap_err();
        assert!(err.is_usage());
        let msg = err.to_string();
        assert!(msg.contains('6') && msg.contains('4'), "{msg}");
    }

    // Brute-force oracle: independent tally over raw pairs, same score
    // formulas over the integer counts.
    fn brute_force_macro_f1(truth: &[usize], pred: &[usize], c: usize) -> f64 {
        let mut f1_sum = 0.0;
        for class in 0..c {
            let tp = truth
                .iter()
                .zip(pred)
                .filter(|&(&t, &p)| t == class && p == class)
                .count() as u64;
            let fp = truth
                .iter()
                .zip(pred)
                .filter(|&(&t, &p)| t != class && p == class)
                .count() as u64;
            let fn_ = truth
                .iter()
                .zip(pred)
                .filter(|&(&t, &p)| t == class && p != class)
                .count() as u64;
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            f1_sum += f1;
        }
        f1_sum / c as f64
    }

    #[test]
    fn random_labels_match_brute_force_exactly() {
        use rand::Rng;
        let mut rng = crate::seeding::rng(99);
        let truth: Vec<usize> = (0..1000).map(|_| rng.random_range(0..3)).collect();
        let pred: Vec<usize> = (0..1000).map(|_| rng.random_range(0..3)).collect();
        let cm = confusion(&truth, &pred, 3).unwrap();
        let expected = brute_force_macro_f1(&truth, &pred, 3);
        assert_eq!(cm.macro_f1().unwrap(), expected);
    }

    proptest! {
        #[test]
        fn macro_f1_stays_in_unit_interval(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..200)
        ) {
            let truth: Vec<usize> = pairs.iter().map(|&(t, _)| t).collect();
            let pred: Vec<usize> = pairs.iter().map(|&(_, p)| p).collect();
            let cm = confusion(&truth, &pred, 4).unwrap();
            let m = cm.macro_f1().unwrap();
            prop_assert!((0.0..=1.0).contains(&m));
        }

        #[test]
        fn macro_f1_is_relabeling_invariant(
            pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..120),
            swap in 0usize..3,
        ) {
            // Apply the same class permutation to truth and prediction.
            let perm = match swap {
                0 => [1, 0, 2],
                1 => [0, 2, 1],
                _ => [2, 1, 0],
            };
            let truth: Vec<usize> = pairs.iter().map(|&(t, _)| t).collect();
            let pred: Vec<usize> = pairs.iter().map(|&(_, p)| p).collect();
            let truth2: Vec<usize> = truth.iter().map(|&t| perm[t]).collect();
            let pred2: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
            let a = confusion(&truth, &pred, 3).unwrap().macro_f1().unwrap();
            let b = confusion(&truth2, &pred2, 3).unwrap().macro_f1().unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn report_average_is_order_invariant(
            scores in proptest::collection::vec(0.0f64..=1.0, 2..6)
        ) {
            let build = |order: Vec<usize>| {
                let domains: Vec<DomainEval> = order
                    .iter()
                    .map(|&i| DomainEval {
                        domain_id: i as u32,
                        confusion: cm_from(&[&[1, 0], &[0, 1]]),
                        f1_per_class: vec![scores[i], scores[i]],
                        macro_f1: scores[i],
                    })
                    .collect();
                EvalReport::from_domains(domains).unwrap().average_macro_f1()
            };
            let fwd = build((0..scores.len()).collect());
            let rev = build((0..scores.len()).rev().collect());
            prop_assert!((fwd - rev).abs() < 1e-12);
        }
    }
}

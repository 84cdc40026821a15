//! Synthetic spurious-correlation benchmark generator.
//!
//! Each example has an *invariant* feature block whose relationship to the
//! label is the same in every environment, and one *spurious* scalar whose
//! agreement with the label varies per environment: high in the training
//! environments, low (anti-correlated) in the held-out test environment. A
//! model that latches onto the spurious scalar looks great in-distribution
//! and collapses under the shift; a model using the invariant block keeps
//! its accuracy. That is exactly the failure mode domain-generalization
//! training is supposed to prevent, in a form small enough to verify.
//!
//! Layout of a feature row: `n_invariant_dims` invariant columns, then the
//! spurious scalar as the last column.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{DatasetBundle, Environment};
use crate::error::{Error, Result};
use crate::kv::{fmt_f64, KvMap, KvWriter};
use crate::seeding::{self, site};

/// Parameters of the generator. `Default` reproduces the benchmark layout:
/// four training environments with spurious agreement {0.95, 0.9, 0.85,
/// 0.8}, a test environment at 0.1, and split sizes/class totals matching
/// the reference clinical-dataset statistics (1124 train / 308 val).
#[derive(Debug, Clone, PartialEq)]
pub struct SpuriousSpec {
    pub n_train_envs: usize,
    /// Per training environment: probability that the spurious scalar's sign
    /// agrees with the label.
    pub train_correlations: Vec<f64>,
    /// Agreement probability in the held-out test environment.
    pub test_correlation: f64,
    pub n_invariant_dims: usize,
    /// Class-conditional mean of each invariant column (`±invariant_mean`).
    pub invariant_mean: f64,
    pub invariant_std: f64,
    /// Class-conditional magnitude of the spurious column.
    pub spurious_mean: f64,
    pub spurious_std: f64,
    /// Per-environment training example counts.
    pub sizes: Vec<usize>,
    /// Per-environment validation example counts (same environments).
    pub val_sizes: Vec<usize>,
    pub test_size: usize,
    /// Fraction of class 1 in train and test environments.
    pub class_balance: f64,
    /// Fraction of class 1 in validation environments.
    pub val_class_balance: f64,
    pub seed: u64,
}

impl Default for SpuriousSpec {
    fn default() -> Self {
        SpuriousSpec {
            n_train_envs: 4,
            train_correlations: vec![0.95, 0.9, 0.85, 0.8],
            test_correlation: 0.1,
            n_invariant_dims: 5,
            invariant_mean: 1.0,
            invariant_std: 1.0,
            spurious_mean: 3.0,
            spurious_std: 0.5,
            sizes: vec![281; 4],
            val_sizes: vec![77; 4],
            test_size: 1000,
            class_balance: 564.0 / 1124.0,
            val_class_balance: 128.0 / 308.0,
            seed: 42,
        }
    }
}

impl SpuriousSpec {
    /// Total feature width: invariant block plus the spurious scalar.
    pub fn feature_dim(&self) -> usize {
        self.n_invariant_dims + 1
    }

    /// Column index of the spurious scalar.
    pub fn spurious_column(&self) -> usize {
        self.n_invariant_dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train_envs < 2 {
            return Err(Error::invalid(format!(
                "n_train_envs must be >= 2, got {}",
                self.n_train_envs
            )));
        }
        if self.train_correlations.len() != self.n_train_envs {
            return Err(Error::invalid(format!(
                "train_correlations has {} entries for {} environments",
                self.train_correlations.len(),
                self.n_train_envs
            )));
        }
        if self.sizes.len() != self.n_train_envs {
            return Err(Error::invalid(format!(
                "sizes has {} entries for {} environments",
                self.sizes.len(),
                self.n_train_envs
            )));
        }
        if self.val_sizes.len() != self.n_train_envs {
            return Err(Error::invalid(format!(
                "val_sizes has {} entries for {} environments",
                self.val_sizes.len(),
                self.n_train_envs
            )));
        }
        for (name, p) in self
            .train_correlations
            .iter()
            .map(|p| ("train_correlations", *p))
            .chain([
                ("test_correlation", self.test_correlation),
                ("class_balance", self.class_balance),
                ("val_class_balance", self.val_class_balance),
            ])
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!(
                    "{name}: probability {p} outside [0, 1]"
                )));
            }
        }
        if self.sizes.iter().chain(&self.val_sizes).any(|&s| s == 0) || self.test_size == 0 {
            return Err(Error::invalid("all environment sizes must be positive".to_string()));
        }
        if self.n_invariant_dims == 0 {
            return Err(Error::invalid("n_invariant_dims must be >= 1".to_string()));
        }
        for (name, v) in [
            ("invariant_mean", self.invariant_mean),
            ("spurious_mean", self.spurious_mean),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite, got {v}")));
            }
        }
        for (name, v) in [("invariant_std", self.invariant_std), ("spurious_std", self.spurious_std)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Canonical key=value form, used for spec files and manifest echoes.
    pub fn write_kv(&self, w: &mut KvWriter) {
        w.set("seed", self.seed);
        w.set("n_train_envs", self.n_train_envs);
        w.set("train_correlations", join_f64(&self.train_correlations));
        w.set("test_correlation", fmt_f64(self.test_correlation));
        w.set("n_invariant_dims", self.n_invariant_dims);
        w.set("invariant_mean", fmt_f64(self.invariant_mean));
        w.set("invariant_std", fmt_f64(self.invariant_std));
        w.set("spurious_mean", fmt_f64(self.spurious_mean));
        w.set("spurious_std", fmt_f64(self.spurious_std));
        w.set("sizes", join_usize(&self.sizes));
        w.set("val_sizes", join_usize(&self.val_sizes));
        w.set("test_size", self.test_size);
        w.set("class_balance", fmt_f64(self.class_balance));
        w.set("val_class_balance", fmt_f64(self.val_class_balance));
    }

    /// Read a spec from a parsed document, starting from defaults: keys
    /// present override, keys absent keep their default, unknown keys error.
    pub fn from_kv(map: &KvMap) -> Result<Self> {
        let mut spec = SpuriousSpec::default();
        let mut r = map.reader();
        if let Some(v) = r.get_u64("seed")? {
            spec.seed = v;
        }
        if let Some(v) = r.get_usize("n_train_envs")? {
            spec.n_train_envs = v;
        }
        if let Some(v) = r.get_list_f64("train_correlations")? {
            spec.train_correlations = v;
        }
        if let Some(v) = r.get_f64("test_correlation")? {
            spec.test_correlation = v;
        }
        if let Some(v) = r.get_usize("n_invariant_dims")? {
            spec.n_invariant_dims = v;
        }
        if let Some(v) = r.get_f64("invariant_mean")? {
            spec.invariant_mean = v;
        }
        if let Some(v) = r.get_f64("invariant_std")? {
            spec.invariant_std = v;
        }
        if let Some(v) = r.get_f64("spurious_mean")? {
            spec.spurious_mean = v;
        }
        if let Some(v) = r.get_f64("spurious_std")? {
            spec.spurious_std = v;
        }
        if let Some(v) = r.get_list_usize("sizes")? {
            spec.sizes = v;
        }
        if let Some(v) = r.get_list_usize("val_sizes")? {
            spec.val_sizes = v;
        }
        if let Some(v) = r.get_usize("test_size")? {
            spec.test_size = v;
        }
        if let Some(v) = r.get_f64("class_balance")? {
            spec.class_balance = v;
        }
        if let Some(v) = r.get_f64("val_class_balance")? {
            spec.val_class_balance = v;
        }
        r.finish()?;
        // When the environment count changes but the per-env lists were not
        // given, resize the default lists rather than erroring.
        if spec.n_train_envs != 4 {
            if !map.contains("sizes") && spec.sizes == vec![281; 4] {
                spec.sizes = vec![281; spec.n_train_envs];
            }
            if !map.contains("val_sizes") && spec.val_sizes == vec![77; 4] {
                spec.val_sizes = vec![77; spec.n_train_envs];
            }
        }
        Ok(spec)
    }
}

fn join_f64(xs: &[f64]) -> String {
    xs.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(",")
}

fn join_usize(xs: &[usize]) -> String {
    xs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Everything the generator emits: the train/val bundle plus the shifted
/// test environment (domain id = number of training environments).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub bundle: DatasetBundle,
    pub test_env: Environment,
}

// Split tags for seed derivation.
const SPLIT_TRAIN: u64 = 0;
const SPLIT_VAL: u64 = 1;
const SPLIT_TEST: u64 = 2;

/// Generate one environment. Class and agreement counts are allocated
/// exactly — `round(size·balance)` class-1 examples and `round(size·p)`
/// label-agreeing spurious signs — with positions shuffled by the
/// environment's derived RNG, so the realized marginals match the spec
/// rather than fluctuating around it.
fn generate_env(
    spec: &SpuriousSpec,
    domain_id: u32,
    size: usize,
    agreement: f64,
    balance: f64,
    split: u64,
    env_index: u64,
) -> Environment {
    use rand::seq::SliceRandom;

    let mut rng = seeding::rng(seeding::mix(&[spec.seed, site::DATA, split, env_index]));

    let n_pos = ((size as f64) * balance).round().min(size as f64) as usize;
    let mut labels: Vec<usize> = vec![1; n_pos];
    labels.resize(size, 0);
    labels.shuffle(&mut rng);

    let n_agree = ((size as f64) * agreement).round().min(size as f64) as usize;
    let mut agree: Vec<bool> = vec![true; n_agree];
    agree.resize(size, false);
    agree.shuffle(&mut rng);

    let mut rows = Vec::with_capacity(size);
    for i in 0..size {
        let y = labels[i];
        let sign = (2 * y) as f64 - 1.0;
        let mut row = Vec::with_capacity(spec.feature_dim());
        for _ in 0..spec.n_invariant_dims {
            let z: f64 = rng.sample(StandardNormal);
            row.push(spec.invariant_mean * sign + spec.invariant_std * z);
        }
        let sp_sign = if agree[i] { sign } else { -sign };
        let z: f64 = rng.sample(StandardNormal);
        row.push(spec.spurious_mean * sp_sign + spec.spurious_std * z);
        rows.push(row);
    }
    Environment::new(domain_id, rows, labels).expect("generated environment is rectangular")
}

/// Generate the full benchmark: training environments with per-environment
/// spurious agreement, matching in-distribution validation environments
/// (same domain ids and agreements, validation sizing), and one held-out
/// test environment at `test_correlation`. Deterministic per `spec.seed`.
pub fn generate_spurious_environments(spec: &SpuriousSpec) -> Result<SyntheticDataset> {
    spec.validate()?;

    let mut train_envs = Vec::with_capacity(spec.n_train_envs);
    let mut val_envs = Vec::with_capacity(spec.n_train_envs);
    for e in 0..spec.n_train_envs {
        let p = spec.train_correlations[e];
        train_envs.push(generate_env(
            spec,
            e as u32,
            spec.sizes[e],
            p,
            spec.class_balance,
            SPLIT_TRAIN,
            e as u64,
        ));
        val_envs.push(generate_env(
            spec,
            e as u32,
            spec.val_sizes[e],
            p,
            spec.val_class_balance,
            SPLIT_VAL,
            e as u64,
        ));
    }
    let test_env = generate_env(
        spec,
        spec.n_train_envs as u32,
        spec.test_size,
        spec.test_correlation,
        spec.class_balance,
        SPLIT_TEST,
        0,
    );
    let bundle = DatasetBundle::new(train_envs, val_envs, 2)?;
    Ok(SyntheticDataset { bundle, test_env })
}

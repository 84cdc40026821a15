//! Two-stage training orchestration.
//!
//! Stage 1 minimizes the variance-penalized objective over per-environment
//! risks; stage 2 fine-tunes on blended cross-environment pairs at a lower
//! learning rate with a fresh optimizer. Every source of randomness is
//! derived from `run_seed`, so a run is a pure function of its config and
//! data: logs, parameters, and checkpoints reproduce bit for bit, and a run
//! interrupted at any checkpoint resumes to the identical result.

pub mod checkpoint;
pub mod log;
pub mod optim;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use log::{EpochRecord, Stage, TrainLog};
pub use optim::{optimizer_step, AdamConfig, LayerMoments, OptimizerKind, OptimizerState};

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::autodiff::{Tape, VarianceMode};
use crate::data::{stratified_batches, DatasetBundle};
use crate::error::{Error, Result};
use crate::kv::{fmt_f64, KvMap, KvReader, KvWriter};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{init_params, InitScheme, ModelConfig, ModelParams};
use crate::objectives::{
    lambda_at_epoch, mixed_loss, per_environment_risks, sample_mixup_batch, vrex_objective,
    MixupConfig, Pairing, VrexConfig,
};
use crate::seeding;

/// Everything a training run depends on besides the dataset itself.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub run_seed: u64,
    pub model: ModelConfig,
    pub vrex: VrexConfig,
    pub mixup: MixupConfig,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    pub adam: AdamConfig,
    /// Mid-stage checkpoint cadence in epochs; 0 keeps only the stage
    /// boundary and final checkpoints.
    pub checkpoint_every: usize,
    /// Stop a stage once validation average macro-F1 has not improved for
    /// `early_stop_patience` consecutive epochs. Off by default: fixed epoch
    /// counts keep logs comparable across runs.
    pub early_stop: bool,
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            run_seed: 42,
            model: ModelConfig::default(),
            vrex: VrexConfig::default(),
            mixup: MixupConfig::default(),
            stage1_epochs: 100,
            stage2_epochs: 50,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
            lr_stage1: 1e-3,
            lr_stage2: 1e-4,
            adam: AdamConfig::default(),
            checkpoint_every: 10,
            early_stop: false,
            early_stop_patience: 10,
        }
    }
}

impl TrainConfig {
    /// Default config rebased on `run_seed` (the init seed follows it).
    pub fn for_run_seed(run_seed: u64) -> Self {
        let mut config = TrainConfig::default();
        config.set_run_seed(run_seed);
        config
    }

    /// Change the run seed and re-derive the init seed from it.
    pub fn set_run_seed(&mut self, run_seed: u64) {
        self.run_seed = run_seed;
        self.model.seed = seeding::init_seed(run_seed);
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.vrex.validate()?;
        self.mixup.validate()?;
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1".to_string()));
        }
        for (name, lr) in [("lr_stage1", self.lr_stage1), ("lr_stage2", self.lr_stage2)] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::invalid(format!("{name} must be > 0 and finite, got {lr}")));
            }
        }
        if self.early_stop && self.early_stop_patience == 0 {
            return Err(Error::invalid(
                "early_stop_patience must be >= 1 when early_stop is on".to_string(),
            ));
        }
        Ok(())
    }

    /// Write every field as `key = value` lines under `prefix` (`""` for a
    /// config file, `"config."` for the echo inside checkpoints/manifests).
    pub fn write_kv(&self, w: &mut KvWriter, prefix: &str) {
        let k = |name: &str| format!("{prefix}{name}");
        w.set(&k("run_seed"), self.run_seed);
        w.set(&k("stage1_epochs"), self.stage1_epochs);
        w.set(&k("stage2_epochs"), self.stage2_epochs);
        w.set(&k("batch_size"), self.batch_size);
        w.set(&k("optimizer"), self.optimizer.name());
        w.set(&k("lr_stage1"), fmt_f64(self.lr_stage1));
        w.set(&k("lr_stage2"), fmt_f64(self.lr_stage2));
        w.set(&k("adam_beta1"), fmt_f64(self.adam.betas.0));
        w.set(&k("adam_beta2"), fmt_f64(self.adam.betas.1));
        w.set(&k("adam_eps"), fmt_f64(self.adam.eps));
        w.set(&k("checkpoint_every"), self.checkpoint_every);
        w.set(&k("early_stop"), self.early_stop);
        w.set(&k("early_stop_patience"), self.early_stop_patience);
        w.set(&k("model.input_dim"), self.model.input_dim);
        w.set(
            &k("model.hidden_dims"),
            self.model
                .hidden_dims
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        w.set(&k("model.num_classes"), self.model.num_classes);
        w.set(&k("model.init_scheme"), self.model.init_scheme.name());
        w.set(&k("model.seed"), self.model.seed);
        w.set(&k("vrex.lambda_max"), fmt_f64(self.vrex.lambda_max));
        w.set(&k("vrex.warmup_epochs"), self.vrex.warmup_epochs);
        w.set(&k("vrex.variance_mode"), self.vrex.variance_mode.name());
        w.set(&k("mixup.alpha"), fmt_f64(self.mixup.alpha));
        w.set(&k("mixup.pairing"), self.mixup.pairing.name());
    }

    /// Read fields under `prefix`; absent keys keep their defaults.
    ///
    /// Seed resolution: `run_seed_override` (a CLI `--seed`) beats the
    /// file's `run_seed`, which beats the default. The init seed follows the
    /// resolved run seed unless the file pins `model.seed` explicitly.
    pub fn from_kv(
        r: &mut KvReader<'_>,
        prefix: &str,
        run_seed_override: Option<u64>,
    ) -> Result<Self> {
        let d = TrainConfig::default();
        let k = |name: &str| format!("{prefix}{name}");

        let file_run_seed = r.get_u64(&k("run_seed"))?;
        let run_seed = run_seed_override.or(file_run_seed).unwrap_or(d.run_seed);

        let optimizer = match r.get_str(&k("optimizer")) {
            Some(s) => OptimizerKind::parse(s)?,
            None => d.optimizer,
        };
        let init_scheme = match r.get_str(&k("model.init_scheme")) {
            Some(s) => InitScheme::parse(s)?,
            None => d.model.init_scheme,
        };
        let variance_mode = match r.get_str(&k("vrex.variance_mode")) {
            Some(s) => VarianceMode::parse(s)?,
            None => d.vrex.variance_mode,
        };
        let pairing = match r.get_str(&k("mixup.pairing")) {
            Some(s) => Pairing::parse(s)?,
            None => d.mixup.pairing,
        };

        let model = ModelConfig {
            input_dim: r.get_usize(&k("model.input_dim"))?.unwrap_or(d.model.input_dim),
            hidden_dims: r
                .get_list_usize(&k("model.hidden_dims"))?
                .unwrap_or(d.model.hidden_dims),
            num_classes: r
                .get_usize(&k("model.num_classes"))?
                .unwrap_or(d.model.num_classes),
            init_scheme,
            seed: r
                .get_u64(&k("model.seed"))?
                .unwrap_or_else(|| seeding::init_seed(run_seed)),
        };
        let vrex = VrexConfig {
            lambda_max: r.get_f64(&k("vrex.lambda_max"))?.unwrap_or(d.vrex.lambda_max),
            warmup_epochs: r
                .get_usize(&k("vrex.warmup_epochs"))?
                .unwrap_or(d.vrex.warmup_epochs),
            variance_mode,
        };
        let mixup = MixupConfig {
            alpha: r.get_f64(&k("mixup.alpha"))?.unwrap_or(d.mixup.alpha),
            pairing,
        };

        Ok(TrainConfig {
            run_seed,
            model,
            vrex,
            mixup,
            stage1_epochs: r.get_usize(&k("stage1_epochs"))?.unwrap_or(d.stage1_epochs),
            stage2_epochs: r.get_usize(&k("stage2_epochs"))?.unwrap_or(d.stage2_epochs),
            batch_size: r.get_usize(&k("batch_size"))?.unwrap_or(d.batch_size),
            optimizer,
            lr_stage1: r.get_f64(&k("lr_stage1"))?.unwrap_or(d.lr_stage1),
            lr_stage2: r.get_f64(&k("lr_stage2"))?.unwrap_or(d.lr_stage2),
            adam: AdamConfig {
                betas: (
                    r.get_f64(&k("adam_beta1"))?.unwrap_or(d.adam.betas.0),
                    r.get_f64(&k("adam_beta2"))?.unwrap_or(d.adam.betas.1),
                ),
                eps: r.get_f64(&k("adam_eps"))?.unwrap_or(d.adam.eps),
            },
            checkpoint_every: r
                .get_usize(&k("checkpoint_every"))?
                .unwrap_or(d.checkpoint_every),
            early_stop: r.get_bool(&k("early_stop"))?.unwrap_or(d.early_stop),
            early_stop_patience: r
                .get_usize(&k("early_stop_patience"))?
                .unwrap_or(d.early_stop_patience),
        })
    }

    /// Parse a whole config document (unknown keys are errors).
    pub fn parse(label: &str, text: &str, run_seed_override: Option<u64>) -> Result<Self> {
        let map = KvMap::parse(label, text)?;
        let mut r = map.reader();
        let config = TrainConfig::from_kv(&mut r, "", run_seed_override)?;
        r.finish()?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path, run_seed_override: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        TrainConfig::parse(&path.display().to_string(), &text, run_seed_override)
    }

    pub fn render_kv(&self) -> String {
        let mut w = KvWriter::new();
        self.write_kv(&mut w, "");
        w.render()
    }
}

/// Named training recipes selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Pooled-mean risk baseline: zero variance penalty, no second stage.
    Erm,
    /// The full two-stage recipe as configured.
    VrexMixup,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::VrexMixup => "vrex_mixup",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "erm" => Ok(Method::Erm),
            "vrex_mixup" => Ok(Method::VrexMixup),
            _ => Err(Error::invalid(format!(
                "unknown method `{s}` (expected erm or vrex_mixup)"
            ))),
        }
    }
}

/// Rewrite `config` to realize `method`. `Erm` zeroes the variance penalty
/// (and its warmup) and drops stage 2; `VrexMixup` leaves the config as-is.
pub fn apply_method(config: &mut TrainConfig, method: Method) {
    match method {
        Method::Erm => {
            config.vrex.lambda_max = 0.0;
            config.vrex.warmup_epochs = 0;
            config.stage2_epochs = 0;
        }
        Method::VrexMixup => {}
    }
}

/// One optimization step's observable quantities (stage 1).
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub epoch: usize,
    pub step: usize,
    pub lambda: f64,
    pub objective: f64,
    pub env_risks: Vec<f64>,
    pub mean_risk: f64,
    /// Penalty-term value; absent when the penalty weight is zero (the
    /// variance is not part of the graph then).
    pub risk_variance: Option<f64>,
}

/// Everything a finished (or resumed-to-finish) run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub params: ModelParams,
    pub log: TrainLog,
    pub checkpoints: Vec<PathBuf>,
    /// Validation-split evaluation of the final parameters.
    pub report: EvalReport,
}

fn variance_f64(xs: &[f64], mode: VarianceMode) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|&x| (x - mean) * (x - mean)).sum();
    match mode {
        VarianceMode::Population => ss / n,
        VarianceMode::Sample => ss / (n - 1.0),
    }
}

fn check_bundle(bundle: &DatasetBundle, config: &TrainConfig) -> Result<()> {
    if bundle.feature_dim() != config.model.input_dim {
        return Err(Error::invalid(format!(
            "dataset feature_dim {} does not match model input_dim {}",
            bundle.feature_dim(),
            config.model.input_dim
        )));
    }
    if bundle.num_classes() != config.model.num_classes {
        return Err(Error::invalid(format!(
            "dataset num_classes {} does not match model num_classes {}",
            bundle.num_classes(),
            config.model.num_classes
        )));
    }
    Ok(())
}

/// Run one variance-penalized epoch over stratified batch groups,
/// updating `params` and `opt` in place.
fn run_stage1_epoch(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    bundle: &DatasetBundle,
    config: &TrainConfig,
    epoch: usize,
    observer: &mut dyn FnMut(&StepInfo),
) -> Result<EpochRecord> {
    let start = Instant::now();
    let envs = bundle.train_envs();
    let lambda = lambda_at_epoch(&config.vrex, epoch);
    let groups = stratified_batches(
        envs,
        config.batch_size,
        seeding::batch_seed(config.run_seed, 1, epoch as u64),
    )?;
    let steps = groups.len();

    let mut objective_sum = 0.0;
    let mut mean_sum = 0.0;
    let mut variance_sum = 0.0;
    let mut risk_sums = vec![0.0; envs.len()];
    for (step, group) in groups.iter().enumerate() {
        let mut tape = Tape::new();
        let traced = params.trace(&mut tape);
        let risks = per_environment_risks(&mut tape, &traced, envs, group, bundle.num_classes())?;
        let terms = vrex_objective(&mut tape, &risks, lambda, config.vrex.variance_mode)?;
        let grads = tape.backward(terms.objective)?;
        optimizer_step(params, &traced.grads(&grads), opt, config.lr_stage1, &config.adam)?;

        let risk_values = risks.values(&tape);
        let objective = terms.objective_value(&tape);
        let mean_risk = terms.mean_value(&tape);
        let penalty_variance = terms.variance_value(&tape);
        objective_sum += objective;
        mean_sum += mean_risk;
        // When the penalty is off the variance is still worth logging; it is
        // then measured outside the graph.
        variance_sum +=
            penalty_variance.unwrap_or_else(|| variance_f64(&risk_values, config.vrex.variance_mode));
        for (sum, &r) in risk_sums.iter_mut().zip(&risk_values) {
            *sum += r;
        }
        observer(&StepInfo {
            epoch,
            step,
            lambda,
            objective,
            env_risks: risk_values,
            mean_risk,
            risk_variance: penalty_variance,
        });
    }

    let n = steps as f64;
    Ok(EpochRecord {
        stage: Stage::Stage1,
        epoch,
        objective: objective_sum / n,
        lambda: Some(lambda),
        env_risks: Some(risk_sums.iter().map(|s| s / n).collect()),
        mean_risk: Some(mean_sum / n),
        risk_variance: Some(variance_sum / n),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Run one blended-pair fine-tuning epoch, updating `params` and `opt` in
/// place. Steps per epoch match stage 1's definition.
fn run_stage2_epoch(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    bundle: &DatasetBundle,
    config: &TrainConfig,
    epoch: usize,
) -> Result<EpochRecord> {
    let start = Instant::now();
    let envs = bundle.train_envs();
    let max_len = envs.iter().map(|e| e.len()).max().unwrap_or(0);
    if max_len == 0 {
        return Err(Error::invalid("all training environments are empty".to_string()));
    }
    let steps = max_len.div_ceil(config.batch_size);

    let mut objective_sum = 0.0;
    for step in 0..steps {
        let step_seed = seeding::mixup_seed(config.run_seed, epoch as u64, step as u64);
        let batch = sample_mixup_batch(
            envs,
            config.batch_size,
            bundle.num_classes(),
            &config.mixup,
            step_seed,
        )?;
        let mut tape = Tape::new();
        let traced = params.trace(&mut tape);
        let loss = mixed_loss(&mut tape, &traced, &batch)?;
        let grads = tape.backward(loss)?;
        optimizer_step(params, &traced.grads(&grads), opt, config.lr_stage2, &config.adam)?;
        objective_sum += tape.value(loss).scalar_value()?;
    }

    Ok(EpochRecord {
        stage: Stage::Stage2,
        epoch,
        objective: objective_sum / steps as f64,
        lambda: None,
        env_risks: None,
        mean_risk: None,
        risk_variance: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

struct EarlyStop {
    enabled: bool,
    patience: usize,
    best: f64,
    epochs_since_best: usize,
}

impl EarlyStop {
    fn new(config: &TrainConfig) -> Self {
        EarlyStop {
            enabled: config.early_stop,
            patience: config.early_stop_patience,
            best: f64::NEG_INFINITY,
            epochs_since_best: 0,
        }
    }

    /// After an epoch: evaluate validation average macro-F1 and decide.
    fn should_stop(&mut self, params: &ModelParams, bundle: &DatasetBundle) -> Result<bool> {
        if !self.enabled {
            return Ok(false);
        }
        let score = evaluate(params, bundle.val_envs())?.average_macro_f1();
        if score > self.best {
            self.best = score;
            self.epochs_since_best = 0;
        } else {
            self.epochs_since_best += 1;
        }
        Ok(self.epochs_since_best >= self.patience)
    }
}

struct BlockRun {
    /// Epochs of this stage completed in total (start epochs included).
    completed: usize,
    checkpoints: Vec<PathBuf>,
}

fn save_checkpoint(
    dir: &Path,
    name: &str,
    config: &TrainConfig,
    stage: Stage,
    epoch: usize,
    params: &ModelParams,
    opt: &OptimizerState,
) -> Result<PathBuf> {
    let path = dir.join(name);
    Checkpoint {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        stage,
        epoch,
        params: params.clone(),
        optimizer: opt.clone(),
    }
    .save(&path)?;
    Ok(path)
}

#[allow(clippy::too_many_arguments)]
fn stage1_block(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    bundle: &DatasetBundle,
    config: &TrainConfig,
    start_epoch: usize,
    train_log: &mut TrainLog,
    ckpt_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochRecord),
    observer: &mut dyn FnMut(&StepInfo),
) -> Result<BlockRun> {
    let mut checkpoints = Vec::new();
    let mut stopper = EarlyStop::new(config);
    let mut completed = start_epoch;
    for epoch in start_epoch..config.stage1_epochs {
        let record = run_stage1_epoch(params, opt, bundle, config, epoch, observer)?;
        train_log.push(record.clone());
        progress(&record);
        completed = epoch + 1;
        if let Some(dir) = ckpt_dir {
            if config.checkpoint_every > 0
                && completed % config.checkpoint_every == 0
                && completed < config.stage1_epochs
            {
                checkpoints.push(save_checkpoint(
                    dir,
                    &format!("stage1_epoch{completed}.ckpt"),
                    config,
                    Stage::Stage1,
                    completed,
                    params,
                    opt,
                )?);
            }
        }
        if stopper.should_stop(params, bundle)? {
            break;
        }
    }
    Ok(BlockRun {
        completed,
        checkpoints,
    })
}

#[allow(clippy::too_many_arguments)]
fn stage2_block(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    bundle: &DatasetBundle,
    config: &TrainConfig,
    start_epoch: usize,
    train_log: &mut TrainLog,
    ckpt_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<BlockRun> {
    let mut checkpoints = Vec::new();
    let mut stopper = EarlyStop::new(config);
    let mut completed = start_epoch;
    for epoch in start_epoch..config.stage2_epochs {
        let record = run_stage2_epoch(params, opt, bundle, config, epoch)?;
        train_log.push(record.clone());
        progress(&record);
        completed = epoch + 1;
        if let Some(dir) = ckpt_dir {
            if config.checkpoint_every > 0
                && completed % config.checkpoint_every == 0
                && completed < config.stage2_epochs
            {
                checkpoints.push(save_checkpoint(
                    dir,
                    &format!("stage2_epoch{completed}.ckpt"),
                    config,
                    Stage::Stage2,
                    completed,
                    params,
                    opt,
                )?);
            }
        }
        if stopper.should_stop(params, bundle)? {
            break;
        }
    }
    Ok(BlockRun {
        completed,
        checkpoints,
    })
}

/// Drive training from `(start_stage, start_epoch)` to the end of stage 2,
/// appending records to `train_log` and writing checkpoints when `ckpt_dir`
/// is given: every `checkpoint_every` epochs mid-stage, always at the
/// stage-1 boundary (`stage1_epoch{N}.ckpt`), and always `final.ckpt`.
#[allow(clippy::too_many_arguments)]
fn advance(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    bundle: &DatasetBundle,
    config: &TrainConfig,
    start_stage: Stage,
    start_epoch: usize,
    train_log: &mut TrainLog,
    ckpt_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<Vec<PathBuf>> {
    let mut checkpoints: Vec<PathBuf> = Vec::new();
    let mut stage2_start = start_epoch;

    if start_stage == Stage::Stage1 {
        let block = stage1_block(
            params,
            opt,
            bundle,
            config,
            start_epoch,
            train_log,
            ckpt_dir,
            progress,
            &mut |_| {},
        )?;
        checkpoints.extend(block.checkpoints);
        if let Some(dir) = ckpt_dir {
            let path = save_checkpoint(
                dir,
                &format!("stage1_epoch{}.ckpt", block.completed),
                config,
                Stage::Stage1,
                block.completed,
                params,
                opt,
            )?;
            // An early-stopped stage can land the boundary on a mid-stage
            // cadence point that was already saved.
            if checkpoints.last() != Some(&path) {
                checkpoints.push(path);
            }
        }
        // Stage 2 optimizes a different objective at a different rate;
        // it starts with fresh optimizer state.
        *opt = OptimizerState::new(config.optimizer, params);
        stage2_start = 0;
    }

    if start_stage != Stage::Final {
        let block = stage2_block(
            params,
            opt,
            bundle,
            config,
            stage2_start,
            train_log,
            ckpt_dir,
            progress,
        )?;
        checkpoints.extend(block.checkpoints);
        if let Some(dir) = ckpt_dir {
            checkpoints.push(save_checkpoint(
                dir,
                "final.ckpt",
                config,
                Stage::Final,
                block.completed,
                params,
                opt,
            )?);
        }
    }

    Ok(checkpoints)
}

/// Stage 1 alone: fresh parameters, variance-penalized training, full log.
pub fn train_stage1_vrex(
    bundle: &DatasetBundle,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    train_stage1_vrex_observed(bundle, config, |_| {})
}

/// Stage 1 with a per-step observer (for instrumentation and tests).
pub fn train_stage1_vrex_observed(
    bundle: &DatasetBundle,
    config: &TrainConfig,
    mut observer: impl FnMut(&StepInfo),
) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    check_bundle(bundle, config)?;
    let mut params = init_params(&config.model)?;
    let mut opt = OptimizerState::new(config.optimizer, &params);
    let mut train_log = TrainLog::new();
    stage1_block(
        &mut params,
        &mut opt,
        bundle,
        config,
        0,
        &mut train_log,
        None,
        &mut |_| {},
        &mut observer,
    )?;
    Ok((params, train_log))
}

/// Stage 2 alone: fine-tune `params` on blended pairs with a fresh
/// optimizer at `lr_stage2`.
pub fn train_stage2_mixup(
    params: ModelParams,
    bundle: &DatasetBundle,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    check_bundle(bundle, config)?;
    let mut params = params;
    let mut opt = OptimizerState::new(config.optimizer, &params);
    let mut train_log = TrainLog::new();
    stage2_block(
        &mut params,
        &mut opt,
        bundle,
        config,
        0,
        &mut train_log,
        None,
        &mut |_| {},
    )?;
    Ok((params, train_log))
}

/// The full recipe: initialize, stage 1, stage 2, evaluate on validation.
/// Checkpoints are written under `ckpt_dir` when given; `progress` sees each
/// epoch record as it is produced.
pub fn run_two_stage(
    bundle: &DatasetBundle,
    config: &TrainConfig,
    ckpt_dir: Option<&Path>,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<RunOutcome> {
    config.validate()?;
    check_bundle(bundle, config)?;
    if bundle.val_envs().is_empty() {
        return Err(Error::invalid(
            "bundle has no validation environments to evaluate".to_string(),
        ));
    }
    let mut params = init_params(&config.model)?;
    let mut opt = OptimizerState::new(config.optimizer, &params);
    let mut train_log = TrainLog::new();
    let checkpoints = advance(
        &mut params,
        &mut opt,
        bundle,
        config,
        Stage::Stage1,
        0,
        &mut train_log,
        ckpt_dir,
        &mut progress,
    )?;
    let report = evaluate(&params, bundle.val_envs())?;
    Ok(RunOutcome {
        params,
        log: train_log,
        checkpoints,
        report,
    })
}

/// Continue a run from `ckpt` to completion. `prior_log` may be the full
/// log of the original run — records at or past the resume point are
/// dropped and regenerated, so the result matches the uninterrupted run
/// exactly. The config comes from the checkpoint itself.
pub fn resume_two_stage(
    bundle: &DatasetBundle,
    ckpt: &Checkpoint,
    prior_log: TrainLog,
    ckpt_dir: Option<&Path>,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<RunOutcome> {
    let config = &ckpt.config;
    config.validate()?;
    check_bundle(bundle, config)?;
    if bundle.val_envs().is_empty() {
        return Err(Error::invalid(
            "bundle has no validation environments to evaluate".to_string(),
        ));
    }
    if ckpt.optimizer.kind != config.optimizer {
        return Err(Error::invalid(format!(
            "checkpoint optimizer state is {} but its config says {}",
            ckpt.optimizer.kind.name(),
            config.optimizer.name()
        )));
    }

    let mut params = ckpt.params.clone();
    let mut train_log = prior_log;

    let (start_stage, start_epoch, mut opt) = match ckpt.stage {
        Stage::Stage1 if ckpt.epoch < config.stage1_epochs => {
            (Stage::Stage1, ckpt.epoch, ckpt.optimizer.clone())
        }
        // Stage boundary: stage 2 starts with fresh optimizer state, same
        // as an uninterrupted run.
        Stage::Stage1 if ckpt.epoch == config.stage1_epochs => (
            Stage::Stage2,
            0,
            OptimizerState::new(config.optimizer, &params),
        ),
        Stage::Stage1 => {
            return Err(Error::invalid(format!(
                "checkpoint is at stage-1 epoch {} but the config trains only {}",
                ckpt.epoch, config.stage1_epochs
            )));
        }
        Stage::Stage2 if ckpt.epoch <= config.stage2_epochs => {
            (Stage::Stage2, ckpt.epoch, ckpt.optimizer.clone())
        }
        Stage::Stage2 => {
            return Err(Error::invalid(format!(
                "checkpoint is at stage-2 epoch {} but the config trains only {}",
                ckpt.epoch, config.stage2_epochs
            )));
        }
        Stage::Final => {
            // Training already finished; nothing to regenerate.
            let report = evaluate(&params, bundle.val_envs())?;
            return Ok(RunOutcome {
                params,
                log: train_log,
                checkpoints: Vec::new(),
                report,
            });
        }
    };

    train_log.truncate_from(start_stage, start_epoch);
    let checkpoints = advance(
        &mut params,
        &mut opt,
        bundle,
        config,
        start_stage,
        start_epoch,
        &mut train_log,
        ckpt_dir,
        &mut progress,
    )?;
    let report = evaluate(&params, bundle.val_envs())?;
    Ok(RunOutcome {
        params,
        log: train_log,
        checkpoints,
        report,
    })
}

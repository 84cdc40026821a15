//! Command-line front end: dataset generation, training, evaluation,
//! gradient verification, report extraction, and seed sweeps.
//!
//! Exit codes are a stable scripting contract: 0 success, 1 runtime
//! failure, 2 usage/config error. Every command is deterministic given the
//! same inputs and seeds, and `train` prints `average_macro_f1=<value>` as
//! its last stdout line so scripts can scrape the headline number without
//! parsing logs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use domgen::autodiff::suite::{self, PASS_THRESHOLD};
use domgen::autodiff::DEFAULT_STEP;
use domgen::data::{csv, generate_spurious_environments, DatasetBundle, Environment, SpuriousSpec};
use domgen::kv::{fmt_f64, KvMap, KvWriter};
use domgen::metrics::{evaluate, EvalReport};
use domgen::trainer::{
    apply_method, resume_two_stage, run_two_stage, Checkpoint, EpochRecord, Method, RunOutcome,
    Stage, TrainConfig, TrainLog,
};
use domgen::{Error, Result};

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "domgen",
    version,
    about = "Two-stage domain-generalization trainer and benchmark for multi-environment tabular data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-environment dataset with a spurious,
    /// environment-dependent feature.
    GenData(GenDataArgs),
    /// Train the two-stage model on a generated (or compatible) dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one dataset split.
    Eval(EvalArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Turn training logs and evaluation tables into plot-ready CSV files.
    Report(ReportArgs),
    /// Run several seeds (and methods) and summarize their scores.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Spec file (`key = value`); a manifest from a previous run also works.
    #[arg(long, value_name = "PATH")]
    spec: Option<PathBuf>,
    /// Generator seed (overrides the spec file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for train.csv, val.csv, test.csv, manifest.txt.
    #[arg(long, value_name = "DIR", default_value = "data")]
    out: PathBuf,
    /// Number of training environments.
    #[arg(long)]
    n_train_envs: Option<usize>,
    /// Comma-separated per-environment spurious agreement probabilities.
    #[arg(long, value_name = "P0,P1,...")]
    train_correlations: Option<String>,
    /// Spurious agreement probability in the held-out test environment.
    #[arg(long)]
    test_correlation: Option<f64>,
    #[arg(long)]
    n_invariant_dims: Option<usize>,
    #[arg(long)]
    invariant_mean: Option<f64>,
    #[arg(long)]
    invariant_std: Option<f64>,
    #[arg(long)]
    spurious_mean: Option<f64>,
    #[arg(long)]
    spurious_std: Option<f64>,
    /// Comma-separated per-environment training example counts.
    #[arg(long, value_name = "N0,N1,...")]
    sizes: Option<String>,
    /// Comma-separated per-environment validation example counts.
    #[arg(long, value_name = "N0,N1,...")]
    val_sizes: Option<String>,
    #[arg(long)]
    test_size: Option<usize>,
    /// Fraction of class 1 in train/test environments.
    #[arg(long)]
    class_balance: Option<f64>,
    /// Fraction of class 1 in validation environments.
    #[arg(long)]
    val_class_balance: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory holding train.csv and val.csv.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Config file; a manifest from a previous training run also works.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run seed (overrides the config file's run_seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for checkpoints, logs, reports, manifest.
    #[arg(long, value_name = "DIR", default_value = "run")]
    out: PathBuf,
    /// Training recipe: `vrex_mixup` (both stages) or `erm` (zero variance
    /// penalty, no second stage).
    #[arg(long, default_value = "vrex_mixup")]
    method: String,
    #[arg(long)]
    stage1_epochs: Option<usize>,
    #[arg(long)]
    stage2_epochs: Option<usize>,
    /// Resume from a checkpoint file (its embedded config drives the run;
    /// not combinable with --config/--seed/--method/epoch flags).
    #[arg(long, value_name = "PATH")]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file to evaluate.
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Dataset directory holding <split>.csv.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Which split file to read.
    #[arg(long, default_value = "val", value_parser = ["train", "val", "test"])]
    split: String,
    /// Also print the pooled (merged-counts) macro F1 next to the average.
    #[arg(long)]
    pooled: bool,
    /// Optionally write report.txt and report.csv here.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed for the random check inputs.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// Training log files (JSON lines), one per run.
    #[arg(long = "log", value_name = "PATH")]
    logs: Vec<PathBuf>,
    /// Evaluation CSV files (as written by train/eval), one per run.
    #[arg(long = "eval", value_name = "PATH")]
    evals: Vec<PathBuf>,
    /// Output directory for the generated CSV files.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Dataset directory holding train.csv, val.csv, and (optionally)
    /// test.csv for shifted-environment scoring.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Base config file applied to every run.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for per-run artifacts and sweep_summary.csv.
    #[arg(long, value_name = "DIR", default_value = "sweep")]
    out: PathBuf,
    /// How many seeds to run per method.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// First run seed; runs use base_seed, base_seed+1, ...
    #[arg(long, default_value_t = 42)]
    base_seed: u64,
    /// Comma-separated methods to compare.
    #[arg(long, default_value = "erm,vrex_mixup")]
    methods: String,
    /// Parallel worker threads (each run stays sequential internally).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Report(args) => cmd_report(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing

/// Reading a user-named input is a usage problem when it fails, not a
/// runtime fault: missing/unreadable paths exit 2.
fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))
}

/// Writing an output stays a runtime (exit 1) I/O error naming the path.
fn write_output(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Extract `prefix`-keyed lines of a manifest as their own document.
fn manifest_section(text: &str, label: &str, prefix: &str) -> Result<KvMap> {
    let filtered: String = text
        .lines()
        .filter_map(|l| l.trim().strip_prefix(prefix))
        .map(|rest| format!("{rest}\n"))
        .collect();
    KvMap::parse(label, &filtered)
}

/// Load a training config from a plain config file or a train manifest.
fn config_from_path(path: &Path, seed_override: Option<u64>) -> Result<TrainConfig> {
    let text = read_input(path)?;
    let label = path.display().to_string();
    let map = KvMap::parse(&label, &text)?;
    if map.contains("manifest_kind") {
        let section = manifest_section(&text, &label, "config.")?;
        let mut r = section.reader();
        let config = TrainConfig::from_kv(&mut r, "", seed_override)?;
        r.finish()?;
        config.validate()?;
        Ok(config)
    } else {
        TrainConfig::parse(&label, &text, seed_override)
    }
}

/// Load a generator spec from a plain spec file or a gen-data manifest.
fn spec_from_path(path: &Path) -> Result<SpuriousSpec> {
    let text = read_input(path)?;
    let label = path.display().to_string();
    let map = KvMap::parse(&label, &text)?;
    if map.contains("manifest_kind") {
        let section = manifest_section(&text, &label, "spec.")?;
        SpuriousSpec::from_kv(&section)
    } else {
        SpuriousSpec::from_kv(&map)
    }
}

fn parse_f64_list(flag: &str, raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::config(format!("{flag}: `{p}` is not a number")))
        })
        .collect()
}

fn parse_usize_list(flag: &str, raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::config(format!("{flag}: `{p}` is not a nonnegative integer")))
        })
        .collect()
}

/// Feature width and class count implied by a CSV file itself.
fn infer_csv_dims(path: &Path) -> Result<(usize, usize)> {
    let text = read_input(path)?;
    let mut lines = text.lines();
    let head = lines
        .next()
        .ok_or_else(|| Error::config(format!("{}: empty file", path.display())))?;
    if !head.starts_with("domain_id,label") {
        return Err(Error::config(format!(
            "{}: unrecognized header `{head}`",
            path.display()
        )));
    }
    let feature_dim = head.split(',').count() - 2;
    let mut max_label = 1usize;
    for line in lines {
        if let Some(l) = line.split(',').nth(1) {
            if let Ok(v) = l.parse::<usize>() {
                max_label = max_label.max(v);
            }
        }
    }
    Ok((feature_dim, max_label + 1))
}

fn load_split(dir: &Path, split: &str, feature_dim: usize, num_classes: usize) -> Result<Vec<Environment>> {
    let path = dir.join(format!("{split}.csv"));
    if !path.exists() {
        return Err(Error::config(format!("no such file: {}", path.display())));
    }
    csv::load_environments(&path, feature_dim, num_classes)
}

fn load_bundle(dir: &Path, config: &TrainConfig) -> Result<DatasetBundle> {
    let train = load_split(dir, "train", config.model.input_dim, config.model.num_classes)?;
    let val = load_split(dir, "val", config.model.input_dim, config.model.num_classes)?;
    DatasetBundle::new(train, val, config.model.num_classes)
}

fn median(mut xs: Vec<f64>) -> f64 {
    assert!(!xs.is_empty());
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn print_epoch_progress(r: &EpochRecord, stage1_total: usize, stage2_total: usize) {
    match r.stage {
        Stage::Stage1 => eprintln!(
            "stage1 epoch {}/{} objective={:.6} lambda={} mean_risk={:.6} risk_variance={:.6e} ({:.2}s)",
            r.epoch + 1,
            stage1_total,
            r.objective,
            r.lambda.unwrap_or(0.0),
            r.mean_risk.unwrap_or(f64::NAN),
            r.risk_variance.unwrap_or(f64::NAN),
            r.wall_time_s
        ),
        Stage::Stage2 | Stage::Final => eprintln!(
            "stage2 epoch {}/{} objective={:.6} ({:.2}s)",
            r.epoch + 1,
            stage2_total,
            r.objective,
            r.wall_time_s
        ),
    }
}

// ---------------------------------------------------------------------------
// gen-data

fn cmd_gen_data(args: GenDataArgs) -> Result<ExitCode> {
    let mut spec = match &args.spec {
        Some(path) => spec_from_path(path)?,
        None => SpuriousSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(n) = args.n_train_envs {
        // Adjust dependent defaults exactly as a spec file would.
        if spec.n_train_envs != n {
            if args.sizes.is_none() && spec.sizes.iter().all(|&s| s == spec.sizes[0]) {
                spec.sizes = vec![spec.sizes[0]; n];
            }
            if args.val_sizes.is_none() && spec.val_sizes.iter().all(|&s| s == spec.val_sizes[0]) {
                spec.val_sizes = vec![spec.val_sizes[0]; n];
            }
        }
        spec.n_train_envs = n;
    }
    if let Some(raw) = &args.train_correlations {
        let list = parse_f64_list("--train-correlations", raw)?;
        if list.len() != spec.n_train_envs {
            return Err(Error::config(format!(
                "--train-correlations lists {} probabilities but there are {} training environments",
                list.len(),
                spec.n_train_envs
            )));
        }
        spec.train_correlations = list;
    }
    if let Some(v) = args.test_correlation {
        spec.test_correlation = v;
    }
    if let Some(v) = args.n_invariant_dims {
        spec.n_invariant_dims = v;
    }
    if let Some(v) = args.invariant_mean {
        spec.invariant_mean = v;
    }
    if let Some(v) = args.invariant_std {
        spec.invariant_std = v;
    }
    if let Some(v) = args.spurious_mean {
        spec.spurious_mean = v;
    }
    if let Some(v) = args.spurious_std {
        spec.spurious_std = v;
    }
    if let Some(raw) = &args.sizes {
        spec.sizes = parse_usize_list("--sizes", raw)?;
    }
    if let Some(raw) = &args.val_sizes {
        spec.val_sizes = parse_usize_list("--val-sizes", raw)?;
    }
    if let Some(v) = args.test_size {
        spec.test_size = v;
    }
    if let Some(v) = args.class_balance {
        spec.class_balance = v;
    }
    if let Some(v) = args.val_class_balance {
        spec.val_class_balance = v;
    }
    spec.validate()?;

    let dataset = generate_spurious_environments(&spec)?;
    ensure_dir(&args.out)?;
    csv::save_environments(&args.out.join("train.csv"), dataset.bundle.train_envs())?;
    csv::save_environments(&args.out.join("val.csv"), dataset.bundle.val_envs())?;
    csv::save_environments(&args.out.join("test.csv"), std::slice::from_ref(&dataset.test_env))?;

    let mut w = KvWriter::new();
    w.comment("dataset manifest: rerun `gen-data --spec <this file>` to reproduce");
    w.set("manifest_kind", "gen_data");
    w.set("tool_version", TOOL_VERSION);
    w.set("seed", spec.seed);
    w.blank();
    let mut spec_w = KvWriter::new();
    spec.write_kv(&mut spec_w);
    for line in spec_w.render().lines() {
        let (k, v) = line.split_once(" = ").expect("writer emits key = value");
        w.set(&format!("spec.{k}"), v);
    }
    w.blank();
    w.set("files.train", "train.csv");
    w.set("files.val", "val.csv");
    w.set("files.test", "test.csv");
    write_output(&args.out.join("manifest.txt"), &w.render())?;

    eprintln!(
        "wrote {}: train.csv ({} rows, {} environments), val.csv ({} rows), test.csv ({} rows)",
        args.out.display(),
        dataset.bundle.n_train_examples(),
        dataset.bundle.train_envs().len(),
        dataset.bundle.n_val_examples(),
        dataset.test_env.len()
    );
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// train

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    if args.resume.is_some()
        && (args.config.is_some()
            || args.seed.is_some()
            || args.stage1_epochs.is_some()
            || args.stage2_epochs.is_some()
            || args.method != "vrex_mixup")
    {
        return Err(Error::config(
            "--resume takes its config from the checkpoint; it cannot be combined with \
             --config, --seed, --method, --stage1-epochs, or --stage2-epochs"
                .to_string(),
        ));
    }

    ensure_dir(&args.out)?;
    let ckpt_dir = args.out.join("checkpoints");
    ensure_dir(&ckpt_dir)?;
    let log_path = args.out.join("train_log.jsonl");

    let (outcome, config, method_name, config_source) = if let Some(resume_path) = &args.resume {
        let text = read_input(resume_path)?;
        let ckpt = Checkpoint::parse(&resume_path.display().to_string(), &text)?;
        let config = ckpt.config.clone();
        let bundle = load_bundle(&args.data, &config)?;
        let prior_log = if log_path.exists() {
            TrainLog::load(&log_path)?
        } else {
            TrainLog::new()
        };
        let (s1, s2) = (config.stage1_epochs, config.stage2_epochs);
        let outcome = resume_two_stage(&bundle, &ckpt, prior_log, Some(&ckpt_dir), |r| {
            print_epoch_progress(r, s1, s2)
        })?;
        let source = format!("resume:{}", resume_path.display());
        (outcome, config, "vrex_mixup".to_string(), source)
    } else {
        let mut config = match &args.config {
            Some(path) => config_from_path(path, args.seed)?,
            None => match args.seed {
                Some(s) => TrainConfig::for_run_seed(s),
                None => TrainConfig::default(),
            },
        };
        if let Some(n) = args.stage1_epochs {
            config.stage1_epochs = n;
        }
        if let Some(n) = args.stage2_epochs {
            config.stage2_epochs = n;
        }
        let method = Method::parse(&args.method)?;
        apply_method(&mut config, method);
        config.validate()?;
        let bundle = load_bundle(&args.data, &config)?;
        let (s1, s2) = (config.stage1_epochs, config.stage2_epochs);
        let outcome = run_two_stage(&bundle, &config, Some(&ckpt_dir), |r| {
            print_epoch_progress(r, s1, s2)
        })?;
        let source = args
            .config
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "defaults".to_string());
        (outcome, config, method.name().to_string(), source)
    };

    outcome.log.save(&log_path)?;
    write_output(&args.out.join("report.txt"), &outcome.report.render_text())?;
    write_output(&args.out.join("report.csv"), &outcome.report.render_csv())?;
    write_train_manifest(&args.out, &config, &method_name, &config_source, &args.data, &outcome)?;

    eprintln!(
        "run complete: {} epochs logged, {} checkpoints in {}",
        outcome.log.len(),
        outcome.checkpoints.len(),
        ckpt_dir.display()
    );
    println!("average_macro_f1={}", fmt_f64(outcome.report.average_macro_f1()));
    Ok(ExitCode::SUCCESS)
}

fn write_train_manifest(
    out: &Path,
    config: &TrainConfig,
    method: &str,
    config_source: &str,
    data: &Path,
    outcome: &RunOutcome,
) -> Result<()> {
    let mut w = KvWriter::new();
    w.comment("run manifest: rerun `train --data <dir> --config <this file>` to reproduce");
    w.set("manifest_kind", "train");
    w.set("tool_version", TOOL_VERSION);
    w.set("seed", config.run_seed);
    w.set("method", method);
    w.set("data", data.display());
    w.set("config_source", config_source);
    w.blank();
    config.write_kv(&mut w, "config.");
    w.blank();
    w.set("files.train_log", "train_log.jsonl");
    w.set("files.report_text", "report.txt");
    w.set("files.report_csv", "report.csv");
    w.set("files.checkpoint_dir", "checkpoints");
    let names: Vec<String> = outcome
        .checkpoints
        .iter()
        .map(|p| {
            p.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
        .collect();
    w.set("files.checkpoints", names.join(","));
    w.set("result.average_macro_f1", fmt_f64(outcome.report.average_macro_f1()));
    write_output(&out.join("manifest.txt"), &w.render())
}

// ---------------------------------------------------------------------------
// eval

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let text = read_input(&args.checkpoint)?;
    let ckpt = Checkpoint::parse(&args.checkpoint.display().to_string(), &text)?;

    let csv_path = args.data.join(format!("{}.csv", args.split));
    let (feature_dim, file_classes) = infer_csv_dims(&csv_path)?;
    let num_classes = file_classes.max(ckpt.config.model.num_classes);
    let envs = load_split(&args.data, &args.split, feature_dim, num_classes)?;
    let report = evaluate(&ckpt.params, &envs)?;

    print!("{}", report.render_text());
    if args.pooled {
        println!("pooled_macro_f1={}", fmt_f64(report.pooled_macro_f1()?));
    }
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        write_output(&out.join("report.txt"), &report.render_text())?;
        write_output(&out.join("report.csv"), &report.render_csv())?;
    }
    println!("average_macro_f1={}", fmt_f64(report.average_macro_f1()));
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// gradcheck

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let results = suite::run_suite(args.seed, DEFAULT_STEP)?;
    let mut failed = 0;
    for r in &results {
        println!(
            "{}: max_rel_err={} components={} inputs={} {}",
            r.name,
            fmt_f64(r.max_rel_err),
            r.components,
            r.inputs,
            if r.passed() { "pass" } else { "FAIL" }
        );
        if !r.passed() {
            failed += 1;
        }
    }
    println!(
        "gradcheck: {}/{} cases passed (threshold {})",
        results.len() - failed,
        results.len(),
        fmt_f64(PASS_THRESHOLD)
    );
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

// ---------------------------------------------------------------------------
// report

fn run_name(path: &Path, index: usize, taken: &[String]) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("run{index}"));
    if taken.contains(&stem) {
        format!("{stem}_{index}")
    } else {
        stem
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn curves_csv(log: &TrainLog) -> String {
    let n_envs = log
        .records()
        .iter()
        .filter_map(|r| r.env_risks.as_ref().map(|e| e.len()))
        .max()
        .unwrap_or(0);
    let mut out = String::from("stage,epoch,objective,lambda,mean_risk,risk_variance");
    for i in 0..n_envs {
        out.push_str(&format!(",env_risk_{i}"));
    }
    out.push('\n');
    for r in log.records() {
        out.push_str(&format!(
            "{},{},{},{},{},{}",
            r.stage.name(),
            r.epoch,
            fmt_f64(r.objective),
            opt_f64(r.lambda),
            opt_f64(r.mean_risk),
            opt_f64(r.risk_variance)
        ));
        for i in 0..n_envs {
            out.push(',');
            if let Some(risks) = &r.env_risks {
                if let Some(v) = risks.get(i) {
                    out.push_str(&fmt_f64(*v));
                }
            }
        }
        out.push('\n');
    }
    out
}

fn comparison_csv(names: &[String], logs: &[TrainLog]) -> String {
    // Key space: (stage, epoch) in first-log-then-others encounter order.
    let mut keys: Vec<(Stage, usize)> = Vec::new();
    for log in logs {
        for r in log.records() {
            if !keys.contains(&(r.stage, r.epoch)) {
                keys.push((r.stage, r.epoch));
            }
        }
    }
    let mut out = String::from("stage,epoch");
    for n in names {
        out.push_str(&format!(",{n}_objective"));
    }
    out.push('\n');
    for (stage, epoch) in keys {
        out.push_str(&format!("{},{epoch}", stage.name()));
        for log in logs {
            out.push(',');
            if let Some(r) = log
                .records()
                .iter()
                .find(|r| r.stage == stage && r.epoch == epoch)
            {
                out.push_str(&fmt_f64(r.objective));
            }
        }
        out.push('\n');
    }
    out
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode> {
    if args.logs.is_empty() && args.evals.is_empty() {
        return Err(Error::config(
            "nothing to report: pass --log and/or --eval files".to_string(),
        ));
    }
    ensure_dir(&args.out)?;
    let mut written = Vec::new();

    if !args.logs.is_empty() {
        let mut names: Vec<String> = Vec::new();
        let mut logs: Vec<TrainLog> = Vec::new();
        for (i, path) in args.logs.iter().enumerate() {
            let text = read_input(path)?;
            logs.push(TrainLog::parse_jsonl(&path.display().to_string(), &text)?);
            let name = run_name(path, i, &names);
            names.push(name);
        }
        if logs.len() == 1 {
            let path = args.out.join("curves.csv");
            write_output(&path, &curves_csv(&logs[0]))?;
            written.push(path);
        } else {
            for (name, log) in names.iter().zip(&logs) {
                let path = args.out.join(format!("curves_{name}.csv"));
                write_output(&path, &curves_csv(log))?;
                written.push(path);
            }
            let path = args.out.join("comparison.csv");
            write_output(&path, &comparison_csv(&names, &logs))?;
            written.push(path);
        }
    }

    if !args.evals.is_empty() {
        let mut header: Option<String> = None;
        let mut body = String::new();
        let mut names: Vec<String> = Vec::new();
        for (i, path) in args.evals.iter().enumerate() {
            let text = read_input(path)?;
            let mut lines = text.lines();
            let head = lines
                .next()
                .ok_or_else(|| Error::config(format!("{}: empty file", path.display())))?;
            match &header {
                None => header = Some(head.to_string()),
                Some(h) if h != head => {
                    return Err(Error::config(format!(
                        "{}: header `{head}` differs from `{h}`",
                        path.display()
                    )));
                }
                Some(_) => {}
            }
            let name = run_name(path, i, &names);
            for line in lines {
                if !line.is_empty() {
                    body.push_str(&format!("{name},{line}\n"));
                }
            }
            names.push(name);
        }
        let path = args.out.join("domains.csv");
        write_output(
            &path,
            &format!("run,{}\n{body}", header.expect("at least one eval file")),
        )?;
        written.push(path);
    }

    for path in &written {
        println!("{}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// sweep

struct SweepRow {
    method: Method,
    run_seed: u64,
    val_average_macro_f1: f64,
    test_macro_f1: Option<f64>,
}

fn sweep_run(
    method: Method,
    run_seed: u64,
    base_config: &TrainConfig,
    bundle: &DatasetBundle,
    test_env: Option<&Environment>,
    out_dir: &Path,
) -> Result<SweepRow> {
    let started = Instant::now();
    let mut config = base_config.clone();
    config.set_run_seed(run_seed);
    apply_method(&mut config, method);
    config.validate()?;

    let outcome = run_two_stage(bundle, &config, None, |_| {})?;
    ensure_dir(out_dir)?;
    outcome.log.save(&out_dir.join("train_log.jsonl"))?;
    write_output(&out_dir.join("report.txt"), &outcome.report.render_text())?;

    let test_macro_f1 = match test_env {
        Some(env) => {
            let report: EvalReport = evaluate(&outcome.params, std::slice::from_ref(env))?;
            let f1 = report.average_macro_f1();
            write_output(&out_dir.join("report_test.txt"), &report.render_text())?;
            Some(f1)
        }
        None => None,
    };
    eprintln!(
        "{} seed {}: val={:.4} test={} ({:.1}s)",
        method.name(),
        run_seed,
        outcome.report.average_macro_f1(),
        test_macro_f1.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".to_string()),
        started.elapsed().as_secs_f64()
    );
    Ok(SweepRow {
        method,
        run_seed,
        val_average_macro_f1: outcome.report.average_macro_f1(),
        test_macro_f1,
    })
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode> {
    if args.seeds == 0 {
        return Err(Error::config("--seeds must be at least 1".to_string()));
    }
    if args.jobs == 0 {
        return Err(Error::config("--jobs must be at least 1".to_string()));
    }
    let methods: Vec<Method> = args
        .methods
        .split(',')
        .map(|m| Method::parse(m.trim()))
        .collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(Error::config("--methods lists no methods".to_string()));
    }

    let base_config = match &args.config {
        Some(path) => config_from_path(path, None)?,
        None => TrainConfig::default(),
    };
    let bundle = load_bundle(&args.data, &base_config)?;
    let test_path = args.data.join("test.csv");
    let test_env: Option<Environment> = if test_path.exists() {
        let envs = load_split(
            &args.data,
            "test",
            base_config.model.input_dim,
            base_config.model.num_classes,
        )?;
        if envs.len() != 1 {
            return Err(Error::config(format!(
                "{}: expected a single test environment, found {}",
                test_path.display(),
                envs.len()
            )));
        }
        Some(envs.into_iter().next().expect("one environment"))
    } else {
        None
    };

    ensure_dir(&args.out)?;
    let tasks: Vec<(Method, u64)> = methods
        .iter()
        .flat_map(|&m| (0..args.seeds).map(move |i| (m, args.base_seed + i)))
        .collect();

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<SweepRow>>> =
        Mutex::new((0..tasks.len()).map(|_| None).collect());
    let failures: Mutex<Vec<Error>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..args.jobs.min(tasks.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= tasks.len() {
                    break;
                }
                let (method, run_seed) = tasks[i];
                let out_dir = args.out.join(format!("{}_seed{}", method.name(), run_seed));
                match sweep_run(method, run_seed, &base_config, &bundle, test_env.as_ref(), &out_dir)
                {
                    Ok(row) => results.lock().expect("no poisoned lock")[i] = Some(row),
                    Err(e) => failures.lock().expect("no poisoned lock").push(e),
                }
            });
        }
    });
    if let Some(e) = failures.into_inner().expect("no poisoned lock").into_iter().next() {
        return Err(e);
    }
    let rows: Vec<SweepRow> = results
        .into_inner()
        .expect("no poisoned lock")
        .into_iter()
        .map(|r| r.expect("every task either filled its slot or failed"))
        .collect();

    let mut summary = String::from("method,run_seed,val_average_macro_f1,test_macro_f1\n");
    for row in &rows {
        summary.push_str(&format!(
            "{},{},{},{}\n",
            row.method.name(),
            row.run_seed,
            fmt_f64(row.val_average_macro_f1),
            row.test_macro_f1.map(fmt_f64).unwrap_or_default()
        ));
    }
    write_output(&args.out.join("sweep_summary.csv"), &summary)?;

    for &method in &methods {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.val_average_macro_f1)
            .collect();
        println!("median_val[{}]={}", method.name(), fmt_f64(median(vals)));
        let tests: Vec<f64> = rows
            .iter()
            .filter(|r| r.method == method)
            .filter_map(|r| r.test_macro_f1)
            .collect();
        if !tests.is_empty() {
            println!("median_test[{}]={}", method.name(), fmt_f64(median(tests)));
        }
    }
    Ok(ExitCode::SUCCESS)
}

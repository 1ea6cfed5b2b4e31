//! Experiment runner behind the `mixreg` binary.
//!
//! Every command resolves an [`ExperimentSpec`] (JSON file, then flag
//! overrides), echoes it to `<out>/spec.json` and writes CSV/JSON artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::beta_moments::coefficients;
use crate::dataset::{flip_labels, make_two_moons, Dataset};
use crate::error::{domain, MixregError, Result};
use crate::evaluate::{metrics, MetricsRow, PredictionMode, RescaleParams};
use crate::model::Model;
use crate::regularization::{r_terms_general, RegularizerBreakdown};
use crate::trainer::{adapt_targets, train, Method, TrainConfig};
use crate::verify::{self, Mutation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Two moons, split into train/test, then a fraction of training labels flipped.
    TwoMoons {
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
        #[serde(default = "default_flip_fraction")]
        flip_fraction: f64,
    },
    /// CSV files as written by `Dataset::save_csv`; without `test` the
    /// training file is split.
    Csv {
        train: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
    },
}

fn default_n() -> usize {
    300
}
fn default_noise() -> f64 {
    0.01
}
fn default_train_fraction() -> f64 {
    0.5
}
fn default_flip_fraction() -> f64 {
    0.2
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::TwoMoons {
            n: default_n(),
            noise: default_noise(),
            train_fraction: default_train_fraction(),
            flip_fraction: default_flip_fraction(),
        }
    }
}

impl DatasetSpec {
    /// Train and test sets for one repetition.
    pub fn load(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSpec::TwoMoons { n, noise, train_fraction, flip_fraction } => {
                let (tr, te) = make_two_moons(*n, *noise, seed)?.split(*train_fraction)?;
                Ok((flip_labels(&tr, *flip_fraction, seed.wrapping_add(1))?, te))
            }
            DatasetSpec::Csv { train, test, train_fraction } => {
                let tr = Dataset::load_csv(train)?;
                match test {
                    Some(p) => Ok((tr, Dataset::load_csv(p)?)),
                    None => tr.split(*train_fraction),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Raw,
    Rescaled,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Raw => "raw",
            EvalMode::Rescaled => "rescaled",
        }
    }

    /// Rescaling statistics come from the training targets as the model saw them.
    pub fn prediction_mode(self, train: &Dataset, cfg: &TrainConfig) -> Result<PredictionMode> {
        Ok(match self {
            EvalMode::Raw => PredictionMode::Raw,
            EvalMode::Rescaled => {
                let theta_bar = coefficients(cfg.alpha)?.theta_bar;
                PredictionMode::Rescaled(RescaleParams::from_training(&adapt_targets(train, cfg.loss)?, theta_bar)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub dataset: DatasetSpec,
    /// Optimizer, objective and model (`train.model`).
    pub train: TrainConfig,
    pub eval_modes: Vec<EvalMode>,
    pub out_dir: PathBuf,
    pub repetitions: usize,
    /// Alpha grid for `sweep`.
    pub alphas: Vec<f64>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            train: TrainConfig::default(),
            eval_modes: vec![EvalMode::Raw, EvalMode::Rescaled],
            out_dir: PathBuf::from("out"),
            repetitions: 30,
            alphas: vec![1.0],
        }
    }
}

impl ExperimentSpec {
    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return domain("repetitions must be at least 1");
        }
        if self.eval_modes.is_empty() {
            return domain("at least one evaluation mode is required");
        }
        if self.alphas.is_empty() {
            return domain("alpha grid is empty");
        }
        Ok(())
    }

    fn echo(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir)?;
        fs::write(self.out_dir.join("spec.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "mixreg", version, about = "Mixup as regularized ERM: training, evaluation and verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON experiment spec; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// erm, mixup, erm_modified or mixup_approx.
    #[arg(long, global = true)]
    pub method: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<EvalMode>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model; writes model.json, trace.csv, metrics.csv and histograms.
    Train(Common),
    /// Evaluate a saved model on the spec's test set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Repeat training over seeds and an alpha grid; mean and 95% CI per cell.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated alpha grid, e.g. 0.1,1,10.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        /// Number of repetitions (seeds seed, seed+1, ...).
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Run the numerical verification suite; exit code 0 iff every check passes.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Inject a single-constant bug into the implementation route.
        #[arg(long, default_value = "none")]
        mutation: Mutation,
        /// Print the JSON report instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Regularizer breakdown of a saved model on the training set.
    Breakdown {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
}

impl clap::builder::ValueParserFactory for Mutation {
    type Parser = clap::builder::ValueParser;
    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<Mutation>())
    }
}

/// File spec with flag overrides applied.
pub fn resolve(common: &Common) -> Result<ExperimentSpec> {
    let mut spec = match &common.config {
        Some(p) => ExperimentSpec::load_json(p)?,
        None => ExperimentSpec::default(),
    };
    if let Some(s) = common.seed {
        spec.train.seed = s;
    }
    if let Some(a) = common.alpha {
        spec.train.alpha = a;
        spec.alphas = vec![a];
    }
    if let Some(m) = &common.method {
        spec.train.method = m.parse()?;
    }
    if let Some(m) = common.mode {
        spec.eval_modes = vec![m];
    }
    if let Some(o) = &common.out {
        spec.out_dir = o.clone();
    }
    spec.validate()?;
    Ok(spec)
}

pub const METRICS_HEADER: &str = "method,mode,seed,alpha,accuracy,ce_loss,ece,mean_entropy,mean_confidence";

/// One metrics row tagged with its (method, mode, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub method: Method,
    pub mode: EvalMode,
    pub seed: u64,
    pub alpha: f64,
    pub metrics: MetricsRow,
}

impl RunMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:?},{}",
            self.method.name(),
            self.mode.name(),
            self.seed,
            self.alpha,
            self.metrics.csv_fields()
        )
    }
}

fn metrics_csv(rows: &[RunMetrics]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

fn evaluate_all(model: &Model, train: &Dataset, test: &Dataset, spec: &ExperimentSpec) -> Result<Vec<RunMetrics>> {
    let cfg = &spec.train;
    spec.eval_modes
        .iter()
        .map(|&mode| {
            Ok(RunMetrics {
                method: cfg.method,
                mode,
                seed: cfg.seed,
                alpha: cfg.alpha,
                metrics: metrics(model, test, &mode.prediction_mode(train, cfg)?)?,
            })
        })
        .collect()
}

fn write_metrics(dir: &Path, rows: &[RunMetrics]) -> Result<()> {
    fs::write(dir.join("metrics.csv"), metrics_csv(rows))?;
    for r in rows {
        let name = format!("histogram_{}_{}_seed{}.csv", r.method.name(), r.mode.name(), r.seed);
        fs::write(dir.join(name), r.metrics.histogram_csv())?;
    }
    Ok(())
}

pub fn cmd_train(spec: &ExperimentSpec) -> Result<Vec<RunMetrics>> {
    spec.echo()?;
    let (tr, te) = spec.dataset.load(spec.train.seed)?;
    let (model, trace) = train(&tr, &te, &spec.train)?;
    model.save_json(spec.out_dir.join("model.json"))?;
    trace.save_csv(spec.out_dir.join("trace.csv"))?;
    let rows = evaluate_all(&model, &tr, &te, spec)?;
    write_metrics(&spec.out_dir, &rows)?;
    Ok(rows)
}

pub fn cmd_eval(spec: &ExperimentSpec, model_path: &Path) -> Result<Vec<RunMetrics>> {
    spec.echo()?;
    let model = Model::load_json(model_path)?;
    let (tr, te) = spec.dataset.load(spec.train.seed)?;
    let rows = evaluate_all(&model, &tr, &te, spec)?;
    write_metrics(&spec.out_dir, &rows)?;
    Ok(rows)
}

pub fn cmd_breakdown(spec: &ExperimentSpec, model_path: &Path) -> Result<RegularizerBreakdown> {
    spec.echo()?;
    let model = Model::load_json(model_path)?;
    let (tr, _) = spec.dataset.load(spec.train.seed)?;
    let ds = adapt_targets(&tr, spec.train.loss)?;
    let b = r_terms_general(&ds, &model, spec.train.loss, &coefficients(spec.train.alpha)?)?;
    fs::write(
        spec.out_dir.join("breakdown.csv"),
        format!("{}\n{}\n", RegularizerBreakdown::CSV_HEADER, b.csv_row()),
    )?;
    Ok(b)
}

/// Mean and half-width of the two-sided 95% Student-t interval. The
/// half-width is `None` for a single value.
pub fn mean_ci95(values: &[f64]) -> Result<(f64, Option<f64>)> {
    let n = values.len();
    if n == 0 {
        return domain("no values to aggregate");
    }
    // shifted by the first value so identical inputs aggregate exactly
    let shift = values[0];
    let dev: Vec<f64> = values.iter().map(|v| v - shift).collect();
    let mean_dev = dev.iter().sum::<f64>() / n as f64;
    let mean = shift + mean_dev;
    if n == 1 {
        return Ok((mean, None));
    }
    let var = dev.iter().map(|d| (d - mean_dev).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| MixregError::Domain(e.to_string()))?
        .inverse_cdf(0.975);
    Ok((mean, Some(t * (var / n as f64).sqrt())))
}

pub const SWEEP_METRICS: [&str; 5] = ["accuracy", "ce_loss", "ece", "mean_entropy", "mean_confidence"];

fn metric_values(m: &MetricsRow) -> [f64; 5] {
    [m.accuracy, m.ce_loss, m.ece, m.mean_entropy, m.mean_confidence]
}

/// `method,alpha,mode,n` then `<metric>_mean,<metric>_ci95` per metric.
pub fn aggregate_csv(runs: &[RunMetrics]) -> Result<String> {
    let mut s = String::from("method,alpha,mode,n");
    for m in SWEEP_METRICS {
        s.push_str(&format!(",{m}_mean,{m}_ci95"));
    }
    s.push('\n');
    let mut cells: Vec<(Method, u64, EvalMode)> = Vec::new();
    for r in runs {
        let key = (r.method, r.alpha.to_bits(), r.mode);
        if !cells.contains(&key) {
            cells.push(key);
        }
    }
    for (method, alpha_bits, mode) in cells {
        let group: Vec<_> =
            runs.iter().filter(|r| r.method == method && r.alpha.to_bits() == alpha_bits && r.mode == mode).collect();
        s.push_str(&format!("{},{:?},{},{}", method.name(), f64::from_bits(alpha_bits), mode.name(), group.len()));
        for k in 0..SWEEP_METRICS.len() {
            let vals: Vec<f64> = group.iter().map(|r| metric_values(&r.metrics)[k]).collect();
            let (mean, ci) = mean_ci95(&vals)?;
            match ci {
                Some(h) => s.push_str(&format!(",{mean:?},{h:?}")),
                None => s.push_str(&format!(",{mean:?},n/a")),
            }
        }
        s.push('\n');
    }
    Ok(s)
}

/// Methods to sweep: the configured one when `--method` was given, all four otherwise.
pub fn cmd_sweep(spec: &ExperimentSpec, methods: &[Method]) -> Result<Vec<RunMetrics>> {
    spec.echo()?;
    let base = spec.train.seed;
    let mut jobs = Vec::new();
    for rep in 0..spec.repetitions as u64 {
        for &alpha in &spec.alphas {
            for &method in methods {
                jobs.push((base + rep, alpha, method));
            }
        }
    }
    let results: Vec<Result<Vec<RunMetrics>>> = jobs
        .par_iter()
        .map(|&(seed, alpha, method)| {
            let mut s = spec.clone();
            s.train.seed = seed;
            s.train.alpha = alpha;
            s.train.method = method;
            let (tr, te) = s.dataset.load(seed)?;
            let (model, _) = train(&tr, &te, &s.train)?;
            evaluate_all(&model, &tr, &te, &s)
        })
        .collect();
    let mut runs = Vec::new();
    for r in results {
        runs.extend(r?);
    }
    fs::write(spec.out_dir.join("sweep_runs.csv"), metrics_csv(&runs))?;
    fs::write(spec.out_dir.join("sweep.csv"), aggregate_csv(&runs)?)?;
    Ok(runs)
}

/// Runs the suite, writes `verify.json` when an output directory is given,
/// and returns the reports.
pub fn cmd_verify(seed: u64, mutation: Mutation, out: Option<&Path>) -> Result<Vec<verify::CheckReport>> {
    let reports = verify::run_all(seed, mutation)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("verify.json"), verify::report_json(&reports)?)?;
    }
    Ok(reports)
}

/// Dispatches a parsed command line; returns the exit code and the text
/// for standard output.
pub fn run(cli: Cli) -> Result<(i32, String)> {
    let out = match cli.command {
        Command::Train(common) => metrics_csv(&cmd_train(&resolve(&common)?)?),
        Command::Eval { common, model } => metrics_csv(&cmd_eval(&resolve(&common)?, &model)?),
        Command::Sweep { common, alphas, repetitions } => {
            let mut spec = resolve(&common)?;
            if let Some(a) = alphas {
                spec.alphas = a;
            }
            if let Some(r) = repetitions {
                spec.repetitions = r;
            }
            spec.validate()?;
            let methods: Vec<Method> = if common.method.is_some() { vec![spec.train.method] } else { Method::ALL.to_vec() };
            cmd_sweep(&spec, &methods)?;
            fs::read_to_string(spec.out_dir.join("sweep.csv"))?
        }
        Command::Verify { common, mutation, json } => {
            let reports = cmd_verify(common.seed.unwrap_or(0), mutation, common.out.as_deref())?;
            let text = if json { verify::report_json(&reports)? + "\n" } else { verify::render_table(&reports) };
            return Ok((if verify::all_passed(&reports) { 0 } else { 1 }, text));
        }
        Command::Breakdown { common, model } => {
            let b = cmd_breakdown(&resolve(&common)?, &model)?;
            format!("{}\n{}\n", RegularizerBreakdown::CSV_HEADER, b.csv_row())
        }
    };
    Ok((0, out))
}

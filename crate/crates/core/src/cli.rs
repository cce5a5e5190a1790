//! Command-line front end. The binary only forwards `std::env::args` to [`run`].
//!
//! Exit codes: 0 success, 1 usage/configuration/data error, 2 a
//! non-vacuous verification failed (the failing verdicts are printed).
//!
//! Model indices in configuration files are 1-based so that they match the
//! `x1..xp` column names of the CSV format; the library itself is 0-based.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bounds::{
    bound_corollary3, bound_pi_short, bound_pi_valid, bound_theorem1, bound_tv, bound_uniform,
    elementary_tail_bounds, intermediate_lemma_bounds, BoundInput, BoundValue, IntermediateKind,
    PerfKind, TailKind,
};
use crate::dgp::{conditional_params, generate_sample, CandidateModel, Dgp, TrainingSample};
use crate::error::{Error, Result};
use crate::harness::{
    experiment_coverage, experiment_ratio, experiment_selection, verify_distribution,
    verify_tail_bound, CoverageOptions, DistributionKind, DistributionParams, ExperimentReport,
    ExperimentSetup, McConfig, Side, TailCheck, WishartBranch,
};
use crate::inference::build_interval;
use crate::numerics::{Matrix, RngStream, Vector};
use crate::selection::{collection_summary, select, CollectionSummary, ModelCollection};
use crate::shrinkage::ShrinkageChoice;

pub const SCHEMA_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "BLOCKSTEIN_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;

// ---------------------------------------------------------------- config

/// `Σ` as a dense matrix or one of the shorthands `"identity"`, `"ar1:ρ"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Dense(Vec<Vec<f64>>),
    Shorthand(String),
}

impl SigmaSpec {
    pub fn build(&self, p: usize) -> Result<Matrix> {
        match self {
            SigmaSpec::Dense(rows) => {
                if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                    return Err(Error::Config(format!("sigma must be {p}x{p}")));
                }
                Ok(Matrix::from_fn(p, p, |i, j| rows[i][j]))
            }
            SigmaSpec::Shorthand(s) if s == "identity" => Ok(Matrix::identity(p, p)),
            SigmaSpec::Shorthand(s) => {
                let rho: f64 = s
                    .strip_prefix("ar1:")
                    .and_then(|r| r.trim().parse().ok())
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "unknown sigma shorthand '{s}' (use \"identity\" or \"ar1:rho\")"
                        ))
                    })?;
                if !(rho.abs() < 1.0) {
                    return Err(Error::Config(format!(
                        "ar1 correlation must satisfy |rho| < 1, got {rho}"
                    )));
                }
                Ok(Matrix::from_fn(p, p, |i, j| {
                    rho.powi((i as i32 - j as i32).abs())
                }))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub p: usize,
    pub beta: Vec<f64>,
    pub sigma: SigmaSpec,
    pub noise_var: f64,
}

impl DgpSpec {
    pub fn build(&self) -> Result<Dgp> {
        if self.beta.len() != self.p {
            return Err(Error::Config(format!(
                "beta has {} entries but p = {}",
                self.beta.len(),
                self.p
            )));
        }
        Dgp::new(
            Vector::from_vec(self.beta.clone()),
            self.sigma.build(self.p)?,
            self.noise_var,
        )
    }
}

/// A candidate model with 1-based column indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub block1: Vec<usize>,
    pub block2: Vec<usize>,
}

impl ModelSpec {
    fn to_zero_based(&self, i: usize) -> Result<CandidateModel> {
        let shift = |b: &[usize]| -> Result<Vec<usize>> {
            b.iter()
                .map(|&j| {
                    j.checked_sub(1).ok_or_else(|| {
                        Error::Config(format!("model {}: indices are 1-based, found 0", i + 1))
                    })
                })
                .collect()
        };
        CandidateModel::new(shift(&self.block1)?, shift(&self.block2)?)
            .map_err(|e| Error::Config(format!("model {}: {e}", i + 1)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_grid")]
    pub epsilon_grid: Vec<f64>,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default)]
    pub parallelism: usize,
}

fn default_reps() -> usize {
    1000
}
fn default_seed() -> u64 {
    1
}
fn default_grid() -> Vec<f64> {
    vec![0.25, 0.5, 1.0]
}
fn default_confidence() -> f64 {
    0.999
}
fn default_alpha() -> f64 {
    0.1
}
fn default_shrinkage() -> ShrinkageChoice {
    ShrinkageChoice::Default
}

impl Default for McSpec {
    fn default() -> Self {
        Self {
            reps: default_reps(),
            master_seed: default_seed(),
            epsilon_grid: default_grid(),
            confidence: default_confidence(),
            parallelism: 0,
        }
    }
}

/// The single configuration file every subcommand reads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub dgp: DgpSpec,
    #[serde(default)]
    pub collection_name: Option<String>,
    pub models: Vec<ModelSpec>,
    #[serde(default = "default_shrinkage")]
    pub shrinkage: ShrinkageChoice,
    #[serde(default)]
    pub mc: McSpec,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Training-sample size used by `experiment` and `verify` when `--n` is absent.
    #[serde(default)]
    pub n: Option<usize>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                cfg.alpha
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn collection(&self, p: usize) -> Result<ModelCollection> {
        let models = self
            .models
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let m = m.to_zero_based(i)?;
                m.validate(p)
                    .map_err(|e| Error::Config(format!("model {}: {e}", i + 1)))?;
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        ModelCollection::new(
            self.collection_name
                .clone()
                .unwrap_or_else(|| "config".into()),
            models,
        )
    }

    pub fn mc_config(&self) -> McConfig {
        McConfig {
            reps: self.mc.reps,
            master_seed: self.mc.master_seed,
            epsilon_grid: self.mc.epsilon_grid.clone(),
            confidence: self.mc.confidence,
            parallelism: self.mc.parallelism,
        }
    }
}

// ---------------------------------------------------------------- CSV

/// Writes `y,x1,…,xp` with shortest round-trip decimal formatting.
pub fn write_csv(sample: &TrainingSample, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    let mut header = vec!["y".to_string()];
    header.extend((1..=sample.p()).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(csv_io)?;
    for i in 0..sample.n() {
        let mut row = vec![format!("{}", sample.y[i])];
        row.extend((0..sample.p()).map(|j| format!("{}", sample.x[(i, j)])));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Reads a `y,x1,…,xp` file; errors name the offending line.
pub fn read_csv(path: &Path, p: usize) -> Result<TrainingSample> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header = r.headers().map_err(csv_io)?.clone();
    let expected: Vec<String> = std::iter::once("y".to_string())
        .chain((1..=p).map(|j| format!("x{j}")))
        .collect();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Data {
            line: 1,
            message: format!(
                "header must be '{}' for p = {p}, found '{}'",
                expected.join(","),
                got.join(",")
            ),
        });
    }
    let mut ys = Vec::new();
    let mut xs = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_io)?;
        let line = rec.position().map_or(0, |pos| pos.line() as usize);
        if rec.len() != p + 1 {
            return Err(Error::Data {
                line,
                message: format!("expected {} fields, found {}", p + 1, rec.len()),
            });
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Data {
                line,
                message: format!("cannot parse '{field}' as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Data {
                    line,
                    message: format!("non-finite value '{field}'"),
                });
            }
            if j == 0 {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    if ys.is_empty() {
        return Err(Error::Data {
            line: 2,
            message: "no data rows".into(),
        });
    }
    let n = ys.len();
    TrainingSample::new(Matrix::from_row_slice(n, p, &xs), Vector::from_vec(ys))
}

// ---------------------------------------------------------------- arguments

#[derive(Debug, Parser)]
#[command(
    name = "blockstein",
    version,
    about = "Block James-Stein shrinkage: fitting, selection, intervals and bound verification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = THREADS_ENV)]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic training sample as CSV.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit every configured model and report shrinkage factors and estimated MSPE.
    Fit(DataArgs),
    /// Fit every model and report the one with the smallest estimated MSPE.
    Select(DataArgs),
    /// Prediction interval at `--x0` from the selected model.
    Interval {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated regressor values x1..xp.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Vec<f64>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Evaluate a closed-form bound.
    Bounds(BoundsArgs),
    /// Monte Carlo check of a distributional identity or a tail bound.
    Verify(VerifyArgs),
    /// Run a headline experiment.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Add the true MSPE and log-ratios (data must come from the configured process).
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum BoundName {
    Theorem1,
    Uniform,
    TruePerf,
    EstPerf,
    Tv,
    TvUniform,
    PiValid,
    PiShort,
    RhohatPos,
    RhohatNeg,
    RhohatMuPos,
    RhohatMuNeg,
    RhoPos,
    RhoNeg,
    RhoMuPos,
    RhoMuNeg,
    QuadformUpper,
    QuadformLower,
    QuadformTwoSided,
    Traceless,
    Nilpotent,
    NilpotentTwoSided,
    NormalTail,
    ChisqTail,
    ChisqTwoSided,
    NoncentralBalance,
    WishartLower,
    WishartUpperShift,
    WishartUpper,
    TraceRelative,
    TraceAbsolute,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[arg(long, value_enum)]
    pub name: BoundName,
    /// Comma-separated ε (or δ) values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub eps: Vec<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    /// |m| (or s_n for uniform bounds).
    #[arg(long)]
    pub m: Option<usize>,
    /// |m₁| (or r_n for uniform bounds).
    #[arg(long)]
    pub m1: Option<usize>,
    /// Collection size |M_n| for uniform bounds.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Signal bound d ≥ Var(y)/σ²; selects the signal-adaptive variant of uniform bounds.
    #[arg(long)]
    pub d_signal: Option<f64>,
    /// Dimension d of the elementary results.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    #[arg(long)]
    pub lambda_min: Option<f64>,
    #[arg(long)]
    pub trace: Option<f64>,
    #[arg(long)]
    pub tau_sq: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub two_sided: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Distribution check (hot_ratio, hot_ratio_block1, sigma_hat, wishart_schur, tzm1, tt1z1,
    /// inv_chisq_diag) or tail check (chisq_tail, chisq_two_sided, quadform_upper,
    /// quadform_lower, quadform_two_sided, traceless, normal_tail, noncentral_balance,
    /// wishart_lower, wishart_upper_shift, wishart_upper, trace_relative, trace_absolute,
    /// rhohat_pos, …, rho_mu_neg).
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub eps: Vec<f64>,
    #[arg(long)]
    pub confidence: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Diagonal of `A` for quadratic-form checks (default: `I_d/d`).
    #[arg(long, value_delimiter = ',')]
    pub diag: Vec<f64>,
    #[arg(long)]
    pub tau_sq: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub two_sided: bool,
    /// Training-sample size for regression-based checks.
    #[arg(long)]
    pub n: Option<usize>,
    /// 1-based index of the configured model for regression-based checks.
    #[arg(long, default_value_t = 1)]
    pub model: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum ExperimentName {
    Ratio,
    Selection,
    Coverage,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub name: ExperimentName,
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Coverage experiment: use the true MSPE in place of its estimate.
    #[arg(long)]
    pub oracle_injection: bool,
}

// ---------------------------------------------------------------- dispatch

/// Outcome of a subcommand: the report and whether a verification failed.
pub struct Outcome {
    pub report: Value,
    /// Failing verdicts, if any.
    pub failed: Option<Value>,
}

impl Outcome {
    fn ok(report: Value) -> Self {
        Self {
            report,
            failed: None,
        }
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(out) => {
            if let Some(failed) = out.failed {
                eprintln!(
                    "verification failed:\n{}",
                    serde_json::to_string_pretty(&failed).unwrap_or_default()
                );
                EXIT_VERIFY
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn emit(value: &Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => fs::write(path, text + "\n")?,
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
        }
    }
    Ok(())
}

fn require_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    let path = path
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    RunConfig::load(path)
}

fn execute(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Gen {
            config,
            n,
            out,
            seed,
        } => {
            let cfg = RunConfig::load(&config)?;
            let dgp = cfg.dgp.build()?;
            let mut rng = RngStream::new(seed.unwrap_or(cfg.mc.master_seed), 0);
            let sample = generate_sample(&dgp, n, &mut rng)?;
            write_csv(&sample, &out)?;
            Ok(Outcome::ok(Value::Null))
        }
        Command::Fit(args) => {
            let report = cmd_fit(&args)?;
            emit(&report, args.common.out.as_deref())?;
            Ok(Outcome::ok(report))
        }
        Command::Select(args) => {
            let report = cmd_select(&args)?;
            emit(&report, args.common.out.as_deref())?;
            Ok(Outcome::ok(report))
        }
        Command::Interval { data, x0, alpha } => {
            let report = cmd_interval(&data, &x0, alpha)?;
            emit(&report, data.common.out.as_deref())?;
            Ok(Outcome::ok(report))
        }
        Command::Bounds(args) => {
            let report = cmd_bounds(&args)?;
            emit(&report, args.out.as_deref())?;
            Ok(Outcome::ok(report))
        }
        Command::Verify(args) => {
            let out = cmd_verify(&args)?;
            emit(&out.report, args.common.out.as_deref())?;
            Ok(out)
        }
        Command::Experiment(args) => {
            let report = cmd_experiment(&args)?;
            let value = serde_json::to_value(&report)?;
            emit(&value, args.common.out.as_deref())?;
            let failures = report.failures();
            let failed = (!failures.is_empty()).then(|| json!(failures));
            Ok(Outcome {
                report: value,
                failed,
            })
        }
    }
}

struct Loaded {
    cfg: RunConfig,
    dgp: Dgp,
    collection: ModelCollection,
    sample: TrainingSample,
}

fn load_with_data(args: &DataArgs) -> Result<Loaded> {
    let cfg = require_config(&args.common.config)?;
    let dgp = cfg.dgp.build()?;
    let collection = cfg.collection(dgp.p())?;
    let sample = read_csv(&args.data, dgp.p())?;
    if let Some(t) = args.common.parallelism {
        // Fitting parallelises over models through rayon's global pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    Ok(Loaded {
        cfg,
        dgp,
        collection,
        sample,
    })
}

fn model_json(m: &CandidateModel) -> Value {
    json!({
        "block1": m.block1.iter().map(|j| j + 1).collect::<Vec<_>>(),
        "block2": m.block2.iter().map(|j| j + 1).collect::<Vec<_>>(),
    })
}

pub fn cmd_fit(args: &DataArgs) -> Result<Value> {
    let l = load_with_data(args)?;
    let r = select(
        &l.sample,
        &l.collection,
        &l.cfg.shrinkage,
        args.oracle.then_some(&l.dgp),
    )?;
    let models: Vec<Value> = l
        .collection
        .models
        .iter()
        .zip(&r.per_model)
        .map(|(m, o)| {
            let mut v = serde_json::to_value(o).expect("serializable");
            v.as_object_mut()
                .expect("object")
                .insert("model".into(), model_json(m));
            v
        })
        .collect();
    Ok(json!({ "n": l.sample.n(), "p": l.sample.p(), "models": models }))
}

pub fn cmd_select(args: &DataArgs) -> Result<Value> {
    let mut v = cmd_fit(args)?;
    let l = load_with_data(args)?;
    let r = select(
        &l.sample,
        &l.collection,
        &l.cfg.shrinkage,
        args.oracle.then_some(&l.dgp),
    )?;
    let obj = v.as_object_mut().expect("object");
    obj.insert("selected".into(), json!(r.selected_empirical + 1));
    obj.insert(
        "selected_model".into(),
        model_json(&l.collection.models[r.selected_empirical]),
    );
    if let (Some(best), Some(stats)) = (r.selected_oracle, r.ratio_stats) {
        obj.insert("best".into(), json!(best + 1));
        obj.insert("ratio_stats".into(), json!(stats));
    }
    Ok(v)
}

pub fn cmd_interval(args: &DataArgs, x0: &[f64], alpha: Option<f64>) -> Result<Value> {
    let l = load_with_data(args)?;
    if x0.len() != l.dgp.p() {
        return Err(Error::Config(format!(
            "--x0 needs {} values, got {}",
            l.dgp.p(),
            x0.len()
        )));
    }
    let alpha = alpha.unwrap_or(l.cfg.alpha);
    let r = select(
        &l.sample,
        &l.collection,
        &l.cfg.shrinkage,
        args.oracle.then_some(&l.dgp),
    )?;
    let k = r.selected_empirical;
    let interval = build_interval(
        &r.fits[k],
        &Vector::from_column_slice(x0),
        r.per_model[k].rho_sq_hat,
        alpha,
    )?;
    let mut v = json!({
        "selected": k + 1,
        "selected_model": model_json(&l.collection.models[k]),
        "interval": interval,
        "lower": interval.lower(),
        "upper": interval.upper(),
    });
    if args.oracle {
        let rho = r.per_model[k].oracle.expect("oracle requested").rho_sq_true;
        v.as_object_mut().expect("object").insert(
            "conditional_coverage".into(),
            json!(crate::inference::conditional_coverage(
                r.per_model[k].rho_sq_hat,
                rho,
                alpha
            )?),
        );
    }
    Ok(v)
}

fn need<T: Copy>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("--{flag} is required for this bound")))
}

fn bound_row(eps: f64, b: BoundValue) -> Value {
    json!({ "epsilon": eps, "value": b.value, "ln_value": b.ln_value, "clipped": b.clipped() })
}

pub fn cmd_bounds(a: &BoundsArgs) -> Result<Value> {
    use BoundName as B;
    let per_model = |eps: f64| -> Result<BoundInput> {
        let mut inp =
            BoundInput::per_model(need(a.n, "n")?, need(a.m, "m")?, need(a.m1, "m1")?, eps);
        inp.mu = a.mu;
        Ok(inp)
    };
    let uniform = |eps: f64| -> Result<BoundInput> {
        let c = CollectionSummary {
            r_n: need(a.m1, "m1")?,
            s_n: need(a.m, "m")?,
            count: need(a.count, "count")?,
        };
        let mut inp = BoundInput::uniform(need(a.n, "n")?, c, eps);
        inp.d = a.d_signal;
        Ok(inp)
    };
    let intermediate = |kind: IntermediateKind, eps: f64| {
        intermediate_lemma_bounds(
            kind,
            need(a.n, "n")?,
            need(a.m, "m")?,
            need(a.m1, "m1")?,
            eps,
            a.mu,
        )
    };
    let elementary = |eps: f64| -> Result<BoundValue> {
        let kind = match a.name {
            B::QuadformUpper => TailKind::QuadFormUpper {
                d: need(a.d, "d")?,
                lambda_max: need(a.lambda_max, "lambda-max")?,
            },
            B::QuadformLower => TailKind::QuadFormLower {
                d: need(a.d, "d")?,
                lambda_max: need(a.lambda_max, "lambda-max")?,
                trace: need(a.trace, "trace")?,
            },
            B::QuadformTwoSided => TailKind::QuadFormTwoSided {
                d: need(a.d, "d")?,
                lambda_max: need(a.lambda_max, "lambda-max")?,
            },
            B::Traceless => TailKind::Traceless {
                d: need(a.d, "d")?,
                lambda_max: need(a.lambda_max, "lambda-max")?,
                lambda_min: need(a.lambda_min, "lambda-min")?,
            },
            B::Nilpotent | B::NilpotentTwoSided => {
                let (d, l) = (need(a.d, "d")?, need(a.lambda_max, "lambda-max")?);
                if a.name == B::Nilpotent {
                    TailKind::Nilpotent {
                        d,
                        lambda_max_ata: l,
                        symmetric_part_positive: l > 0.0,
                    }
                } else {
                    TailKind::NilpotentTwoSided {
                        d,
                        lambda_max_ata: l,
                        symmetric_part_positive: l > 0.0,
                    }
                }
            }
            B::NormalTail => TailKind::NormalTail {
                tau_sq: need(a.tau_sq, "tau-sq")?,
            },
            B::ChisqTail => TailKind::ChiSqUpper { k: need(a.k, "k")? },
            B::ChisqTwoSided => TailKind::ChiSqTwoSided { k: need(a.k, "k")? },
            B::NoncentralBalance => TailKind::NoncentralBalance {
                d: need(a.d, "d")?,
                k: need(a.k, "k")?,
                b: need(a.b, "b")?,
                two_sided: a.two_sided,
            },
            B::WishartLower => TailKind::WishartLower {
                d: need(a.d, "d")?,
                k: need(a.k, "k")?,
            },
            B::WishartUpperShift => TailKind::WishartUpperShift {
                d: need(a.d, "d")?,
                k: need(a.k, "k")?,
            },
            B::WishartUpper => TailKind::WishartUpper {
                d: need(a.d, "d")?,
                k: need(a.k, "k")?,
            },
            B::TraceRelative => TailKind::TraceRelative {
                d: need(a.d, "d")?,
                k: need(a.k, "k")?,
            },
            B::TraceAbsolute => TailKind::TraceAbsolute {
                d: need(a.d, "d")?,
                k: need(a.k, "k")?,
            },
            _ => unreachable!("headline and intermediate names are handled by the caller"),
        };
        elementary_tail_bounds(&kind, eps)
    };
    let rows = a
        .eps
        .iter()
        .map(|&eps| {
            let b = match a.name {
                B::Theorem1 => bound_theorem1(&per_model(eps)?)?,
                B::Tv => bound_tv(&per_model(eps)?, false, a.mu.is_some())?,
                B::Uniform => bound_uniform(&uniform(eps)?, a.d_signal.is_some())?,
                B::TruePerf => {
                    bound_corollary3(&uniform(eps)?, PerfKind::TruePerf, a.d_signal.is_some())?
                }
                B::EstPerf => {
                    bound_corollary3(&uniform(eps)?, PerfKind::EstPerf, a.d_signal.is_some())?
                }
                B::TvUniform => bound_tv(&uniform(eps)?, true, a.d_signal.is_some())?,
                B::PiValid => bound_pi_valid(&uniform(eps)?, a.d_signal.is_some())?,
                B::PiShort => bound_pi_short(&uniform(eps)?, a.d_signal.is_some())?,
                B::RhohatPos => intermediate(IntermediateKind::RhohatPos, eps)?,
                B::RhohatNeg => intermediate(IntermediateKind::RhohatNeg, eps)?,
                B::RhohatMuPos => intermediate(IntermediateKind::RhohatMuPos, eps)?,
                B::RhohatMuNeg => intermediate(IntermediateKind::RhohatMuNeg, eps)?,
                B::RhoPos => intermediate(IntermediateKind::RhoPos, eps)?,
                B::RhoNeg => intermediate(IntermediateKind::RhoNeg, eps)?,
                B::RhoMuPos => intermediate(IntermediateKind::RhoMuPos, eps)?,
                B::RhoMuNeg => intermediate(IntermediateKind::RhoMuNeg, eps)?,
                _ => elementary(eps)?,
            };
            Ok(bound_row(eps, b))
        })
        .collect::<Result<Vec<_>>>()?;
    let name = a
        .name
        .to_possible_value()
        .map(|v| v.get_name().to_string())
        .unwrap_or_default();
    Ok(json!({ "bound": name, "rows": rows }))
}

fn mc_from(
    cfg: Option<&RunConfig>,
    reps: Option<usize>,
    seed: Option<u64>,
    parallelism: Option<usize>,
) -> McConfig {
    let mut mc = cfg.map(RunConfig::mc_config).unwrap_or_default();
    if cfg.is_none() {
        mc.reps = McSpec::default().reps;
    }
    if let Some(r) = reps {
        mc.reps = r;
    }
    if let Some(s) = seed {
        mc.master_seed = s;
    }
    if let Some(p) = parallelism {
        mc.parallelism = p;
    }
    mc
}

fn distribution_kind(name: &str) -> Option<DistributionKind> {
    serde_json::from_value(json!(name)).ok()
}

fn intermediate_kind(name: &str) -> Option<IntermediateKind> {
    serde_json::from_value(json!(name)).ok()
}

fn pick_model(cfg: &RunConfig, dgp: &Dgp, index: usize) -> Result<CandidateModel> {
    let c = cfg.collection(dgp.p())?;
    index
        .checked_sub(1)
        .and_then(|i| c.models.get(i).cloned())
        .ok_or_else(|| Error::Config(format!("--model {index} is out of range 1..={}", c.len())))
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<Outcome> {
    let cfg = a
        .common
        .config
        .as_ref()
        .map(|p| RunConfig::load(p))
        .transpose()?;
    let mut mc = mc_from(cfg.as_ref(), a.reps, a.seed, a.common.parallelism);
    if !a.eps.is_empty() {
        mc.epsilon_grid = a.eps.clone();
    }
    if let Some(c) = a.confidence {
        mc.confidence = c;
    }
    let regression = || -> Result<(Dgp, CandidateModel, usize)> {
        let cfg = cfg.as_ref().ok_or_else(|| {
            Error::Config("--config is required for regression-based checks".into())
        })?;
        let dgp = cfg.dgp.build()?;
        let m = pick_model(cfg, &dgp, a.model)?;
        let n =
            a.n.or(cfg.n)
                .ok_or_else(|| Error::Config("--n (or config n) is required".into()))?;
        Ok((dgp, m, n))
    };

    if let Some(kind) = distribution_kind(&a.kind) {
        let params = if kind == DistributionKind::InvChisqDiag {
            DistributionParams::Gaussian {
                d: need(a.d, "d")?,
                k: need(a.k, "k")?,
            }
        } else {
            let (dgp, model, n) = regression()?;
            DistributionParams::Regression { dgp, model, n }
        };
        let r = verify_distribution(kind, &params, &mc)?;
        let report = json!({ "check": a.kind, "report": r });
        let failed = (!r.pass).then(|| json!(r));
        return Ok(Outcome { report, failed });
    }

    let check = if let Some(kind) = intermediate_kind(&a.kind) {
        let (dgp, model, n) = regression()?;
        let shrink = cfg
            .as_ref()
            .map_or(ShrinkageChoice::Default, |c| c.shrinkage);
        TailCheck::Intermediate {
            kind,
            dgp,
            model,
            n,
            shrink,
        }
    } else {
        let quad = || -> Result<Matrix> {
            if a.diag.is_empty() {
                let d = need(a.d, "d")?;
                Ok(Matrix::identity(d, d) / d as f64)
            } else {
                Ok(Matrix::from_diagonal(&Vector::from_column_slice(&a.diag)))
            }
        };
        match a.kind.as_str() {
            "chisq_tail" => TailCheck::ChiSq {
                k: need(a.k, "k")?,
                two_sided: false,
            },
            "chisq_two_sided" => TailCheck::ChiSq {
                k: need(a.k, "k")?,
                two_sided: true,
            },
            "quadform_upper" => TailCheck::QuadForm {
                a: quad()?,
                side: Side::Upper,
            },
            "quadform_lower" => TailCheck::QuadForm {
                a: quad()?,
                side: Side::Lower,
            },
            "quadform_two_sided" => TailCheck::QuadForm {
                a: quad()?,
                side: Side::TwoSided,
            },
            "traceless" => {
                let d = need(a.d, "d")?;
                if d < 2 {
                    return Err(Error::Config("--d must be >= 2 for traceless".into()));
                }
                // diag(1, −1, 0, …) / d: the simplest symmetric traceless matrix.
                let mut m = Matrix::zeros(d, d);
                m[(0, 0)] = 1.0 / d as f64;
                m[(1, 1)] = -1.0 / d as f64;
                TailCheck::Traceless { a: m }
            }
            "normal_tail" => TailCheck::NormalTail {
                tau_sq: need(a.tau_sq, "tau-sq")?,
            },
            "noncentral_balance" => TailCheck::NoncentralBalance {
                d: need(a.d, "d")?,
                k: need(a.k, "k")?,
                b: need(a.b, "b")?,
                two_sided: a.two_sided,
            },
            "wishart_lower" => TailCheck::Wishart {
                d: need(a.d, "d")?,
                k: need(a.k, "k")?,
                branch: WishartBranch::Lower,
            },
            "wishart_upper_shift" => TailCheck::Wishart {
                d: need(a.d, "d")?,
                k: need(a.k, "k")?,
                branch: WishartBranch::UpperShift,
            },
            "wishart_upper" => TailCheck::Wishart {
                d: need(a.d, "d")?,
                k: need(a.k, "k")?,
                branch: WishartBranch::Upper,
            },
            "trace_relative" => TailCheck::Trace {
                d: need(a.d, "d")?,
                k: need(a.k, "k")?,
                relative: true,
            },
            "trace_absolute" => TailCheck::Trace {
                d: need(a.d, "d")?,
                k: need(a.k, "k")?,
                relative: false,
            },
            other => return Err(Error::Config(format!("unknown check kind '{other}'"))),
        }
    };
    let verdicts = verify_tail_bound(&check, &mc)?;
    let failing: Vec<_> = verdicts.iter().filter(|v| !v.pass).collect();
    let failed = (!failing.is_empty()).then(|| json!(failing));
    Ok(Outcome {
        report: json!({ "check": check.name(), "reps": mc.reps, "per_epsilon": verdicts }),
        failed,
    })
}

pub fn cmd_experiment(a: &ExperimentArgs) -> Result<ExperimentReport> {
    let cfg = require_config(&a.common.config)?;
    let dgp = cfg.dgp.build()?;
    let collection = cfg.collection(dgp.p())?;
    let mc = mc_from(Some(&cfg), a.reps, a.seed, a.common.parallelism);
    let n =
        a.n.or(cfg.n)
            .ok_or_else(|| Error::Config("--n (or config n) is required".into()))?;
    // Touch the summary early so an unusable collection fails before any simulation.
    collection_summary(&collection)?;
    let _ = conditional_params(&dgp, &collection.models[0])?;
    let setup = ExperimentSetup {
        dgp: &dgp,
        collection: &collection,
        n,
        shrink: &cfg.shrinkage,
    };
    match a.name {
        ExperimentName::Ratio => experiment_ratio(&setup, &mc),
        ExperimentName::Selection => experiment_selection(&setup, &mc),
        ExperimentName::Coverage => experiment_coverage(
            &setup,
            &mc,
            CoverageOptions {
                alpha: a.alpha.unwrap_or(cfg.alpha),
                oracle_injection: a.oracle_injection,
            },
        ),
    }
}

//! Command-line surface.
//!
//! Every command resolves a [`RunConfig`] from an optional TOML file
//! (`--config`) and then applies flag overrides; flags always win. The
//! resolved config is written to `<out>/run_config.toml` before any
//! computation, and `prefroute <command> --config <out>/run_config.toml`
//! reproduces the run.
//!
//! The default output directory is `$PREFROUTE_OUTPUT_ROOT/<command>`, or
//! `runs/<command>` when the variable is unset.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 data error, 4 numerical
//! failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bandits::{train_agent, AgentConfig, AgentKind, BanditError, LinearAgent};
use crate::checkpoint::{Checkpoint, CheckpointError, Model};
use crate::domain::{PreferenceVector, RewardSpec};
use crate::environment::{
    gen_synthetic, ingest, write_dataset, BanditEnvironment, EmbeddingSource, EnvError, IngestOptions, LogFormat,
    LoggedDataset, Split, SyntheticKind, SyntheticSpec,
};
use crate::evaluation::{
    compare, evaluate, evaluate_oracle, sweep_oracle, sweep_preferences, EvalError, EvaluationReport, ReportMeta,
    DEFAULT_SWEEP_GRID,
};
use crate::learning::{LearningError, Trainer, TrainingConfig};
use crate::numerics::SeededRng;
use crate::policy::HeadKind;

pub const OUTPUT_ROOT_ENV: &str = "PREFROUTE_OUTPUT_ROOT";
pub const RUN_CONFIG_FILE: &str = "run_config.toml";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(m: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: m.into(),
        }
    }

    pub fn data(m: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: m.into(),
        }
    }

    pub fn numeric(m: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERIC,
            message: m.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::InvalidSpec(_) => CliError::usage(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<LearningError> for CliError {
    fn from(e: LearningError) -> Self {
        match e {
            LearningError::Env(e) => e.into(),
            LearningError::InvalidConfig(_) => CliError::usage(e.to_string()),
            LearningError::NonFiniteLoss { .. } | LearningError::Numerics(_) => CliError::numeric(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<BanditError> for CliError {
    fn from(e: BanditError) -> Self {
        match e {
            BanditError::Env(e) => e.into(),
            BanditError::InvalidConfig(_) => CliError::usage(e.to_string()),
            BanditError::Numerics(_) | BanditError::NonFiniteReward(_) => CliError::numeric(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Env(e) => e.into(),
            EvalError::InvalidGrid(_) => CliError::usage(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::data(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Reinforce,
    LinUcb,
    LinTs,
    EpsilonGreedy,
}

impl Algorithm {
    fn agent_kind(self) -> Option<AgentKind> {
        match self {
            Algorithm::Reinforce => None,
            Algorithm::LinUcb => Some(AgentKind::LinUcb),
            Algorithm::LinTs => Some(AgentKind::LinTs),
            Algorithm::EpsilonGreedy => Some(AgentKind::EpsilonGreedy),
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("reinforce") {
            return Ok(Algorithm::Reinforce);
        }
        let kind: AgentKind = s
            .parse()
            .map_err(|_| format!("unknown algorithm `{s}` (reinforce|linucb|lints|epsilon-greedy)"))?;
        Ok(match kind {
            AgentKind::LinUcb => Algorithm::LinUcb,
            AgentKind::LinTs => Algorithm::LinTs,
            AgentKind::EpsilonGreedy => Algorithm::EpsilonGreedy,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Inferred from the extension when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<LogFormat>,
    pub strict: bool,
    /// Ignore any sidecar and use the hashed featurizer.
    pub hash_embeddings: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings_bin: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings_index: Option<PathBuf>,
    pub split_seed: u64,
    pub featurizer_seed: u64,
    pub ood_tasks: Vec<String>,
    /// Cost cap; absent means the dataset default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub kind: SyntheticKind,
    pub n: usize,
    pub d_e: usize,
    /// Arm count; absent means 2 (piecewise), 3 (xor) or 4 (linear).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub tau: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::PiecewisePreference,
            n: 2000,
            d_e: 8,
            k: None,
            tau: 0.01,
        }
    }
}

impl SynthConfig {
    pub fn spec(&self) -> SyntheticSpec {
        let k = self.k.unwrap_or(match self.kind {
            SyntheticKind::PiecewisePreference => 2,
            SyntheticKind::NonlinearXor => 3,
            SyntheticKind::Linear => 4,
        });
        SyntheticSpec {
            tau: self.tau,
            ..SyntheticSpec::new(self.kind, k, self.d_e, self.n)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta: f64,
    pub head: HeadKind,
    pub d_p: usize,
    pub pref_hidden: usize,
    pub head_hidden: usize,
    pub bilinear_rank: usize,
    /// Write `checkpoints/epoch_NNNN.json` every this many epochs (0 = final only).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self {
            algorithm: Algorithm::Reinforce,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            beta: t.beta,
            head: t.head_kind,
            d_p: t.d_p,
            pref_hidden: t.pref_hidden,
            head_hidden: t.head_hidden,
            bilinear_rank: t.bilinear_rank,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentParams {
    pub lambda: f64,
    pub alpha: f64,
    pub nu: f64,
    pub epsilon: f64,
    pub refactor_every: usize,
}

impl Default for AgentParams {
    fn default() -> Self {
        let a = AgentConfig::default();
        Self {
            lambda: a.lambda,
            alpha: a.alpha,
            nu: a.nu,
            epsilon: a.epsilon,
            refactor_every: a.refactor_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate the per-record best arm instead of a checkpoint.
    pub oracle: bool,
    pub split: Split,
    pub w_c: f64,
    pub grid: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            oracle: false,
            split: Split::Test,
            w_c: 0.5,
            grid: DEFAULT_SWEEP_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate: Option<PathBuf>,
}

/// Fully resolved configuration of one command invocation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub agent: AgentParams,
    pub eval: EvalConfig,
    pub compare: CompareConfig,
}

impl RunConfig {
    pub fn from_toml(s: &str) -> CliResult<Self> {
        toml::from_str(s).map_err(|e| CliError::usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let s = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn training_config(&self) -> TrainingConfig {
        let t = &self.train;
        TrainingConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            beta: t.beta,
            seed: self.seed,
            head_kind: t.head,
            tau: None,
            d_p: t.d_p,
            pref_hidden: t.pref_hidden,
            head_hidden: t.head_hidden,
            bilinear_rank: t.bilinear_rank,
        }
    }

    pub fn agent_config(&self, kind: AgentKind) -> AgentConfig {
        let a = &self.agent;
        AgentConfig {
            kind,
            lambda: a.lambda,
            alpha: a.alpha,
            nu: a.nu,
            epsilon: a.epsilon,
            refactor_every: a.refactor_every,
        }
    }

    pub fn ingest_options(&self) -> IngestOptions {
        let d = &self.data;
        let embeddings = if d.hash_embeddings {
            EmbeddingSource::Hash
        } else if let (Some(bin), Some(index)) = (&d.embeddings_bin, &d.embeddings_index) {
            EmbeddingSource::Sidecar {
                bin: bin.clone(),
                index: index.clone(),
            }
        } else {
            EmbeddingSource::Auto
        };
        IngestOptions {
            strict: d.strict,
            embeddings,
            split_seed: d.split_seed,
            ood_tasks: d.ood_tasks.clone(),
            featurizer_seed: d.featurizer_seed,
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| default_output_root().join(&self.command))
    }
}

/// `$PREFROUTE_OUTPUT_ROOT`, or `runs`.
pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Debug, Parser)]
#[command(
    name = "prefroute",
    version,
    about = "Preference-conditioned LLM routing: train routers on logged outcomes and evaluate them"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory [default: $PREFROUTE_OUTPUT_ROOT/COMMAND or runs/COMMAND].
    #[arg(long, short = 'o', global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Master seed for generation, training and exploration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic logged dataset (JSON-lines log plus embedding sidecar).
    GenSynth(GenSynthArgs),
    /// Validate a log file and print a summary.
    IngestCheck(DataArgs),
    /// Train a REINFORCE policy or a linear bandit agent.
    Train(TrainArgs),
    /// Evaluate a checkpoint at one preference.
    Evaluate(EvalArgs),
    /// Evaluate a checkpoint over a grid of cost weights.
    Sweep(SweepArgs),
    /// Relative score improvement and cost reduction between two reports.
    Compare(CompareArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenSynth(_) => "gen-synth",
            Command::IngestCheck(_) => "ingest-check",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Sweep(_) => "sweep",
            Command::Compare(_) => "compare",
        }
    }
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// linear, piecewise-preference or nonlinear-xor.
    #[arg(long)]
    pub kind: Option<SyntheticKind>,
    /// Number of records.
    #[arg(long)]
    pub n: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    pub d_e: Option<usize>,
    /// Number of arms.
    #[arg(long)]
    pub k: Option<usize>,
    /// Cost cap written to the log header.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Log file (.jsonl or .csv).
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// jsonl or csv [default: from the extension].
    #[arg(long)]
    pub format: Option<LogFormat>,
    /// Reject out-of-range scores instead of clamping.
    #[arg(long)]
    pub strict: bool,
    /// Use the hashed featurizer even when a sidecar exists.
    #[arg(long)]
    pub hash_embeddings: bool,
    /// Embedding sidecar (little-endian f32 rows).
    #[arg(long, value_name = "FILE", requires = "embeddings_index")]
    pub embeddings_bin: Option<PathBuf>,
    /// Sidecar index (JSON: dim and byte offsets per prompt id).
    #[arg(long, value_name = "FILE", requires = "embeddings_bin")]
    pub embeddings_index: Option<PathBuf>,
    /// Salt for the hash-based train/test split.
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Task held out of training (repeatable).
    #[arg(long = "ood-task", value_name = "TASK")]
    pub ood_tasks: Vec<String>,
    /// Cost cap [default: header `tau`, else 95th percentile of training costs].
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// reinforce, linucb, lints or epsilon-greedy.
    #[arg(long)]
    pub algorithm: Option<Algorithm>,
    /// Decision head for reinforce: linear, bilinear or mlp.
    #[arg(long)]
    pub head: Option<HeadKind>,
    /// Passes over the training split.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Interactions per REINFORCE update.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Entropy regularization coefficient.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Write an intermediate checkpoint every N epochs.
    #[arg(long, value_name = "N")]
    pub checkpoint_every: Option<usize>,
    /// Ridge regularization for linear agents.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// LinUCB exploration width.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// LinTS posterior scale.
    #[arg(long)]
    pub nu: Option<f64>,
    /// Exploration probability for epsilon-greedy.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate the per-record best arm instead of a checkpoint.
    #[arg(long)]
    pub oracle: bool,
    /// train, test or ood.
    #[arg(long)]
    pub split: Option<Split>,
    /// Cost weight; the preference is (1 - w_c, w_c).
    #[arg(long)]
    pub w_c: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Sweep the per-record best arm instead of a checkpoint.
    #[arg(long)]
    pub oracle: bool,
    /// train, test or ood.
    #[arg(long)]
    pub split: Option<Split>,
    /// Comma-separated cost weights [default: 0,0.2,0.4,0.5,0.6,0.8,1].
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Reference report JSON.
    #[arg(long, value_name = "FILE")]
    pub reference: Option<PathBuf>,
    /// Candidate report JSON.
    #[arg(long, value_name = "FILE")]
    pub candidate: Option<PathBuf>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_data(d: &mut DataConfig, a: &DataArgs) {
    if a.dataset.is_some() {
        d.dataset = a.dataset.clone();
    }
    if a.format.is_some() {
        d.format = a.format;
    }
    d.strict |= a.strict;
    d.hash_embeddings |= a.hash_embeddings;
    if a.embeddings_bin.is_some() {
        d.embeddings_bin = a.embeddings_bin.clone();
        d.embeddings_index = a.embeddings_index.clone();
    }
    set(&mut d.split_seed, a.split_seed);
    if !a.ood_tasks.is_empty() {
        d.ood_tasks = a.ood_tasks.clone();
    }
    if a.tau.is_some() {
        d.tau = a.tau;
    }
}

/// Merges the config file (if any) with flag overrides.
pub fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.command = cli.command.name().to_string();
    set(&mut cfg.seed, cli.seed);
    if cli.out.is_some() {
        cfg.output_dir = cli.out.clone();
    }
    match &cli.command {
        Command::GenSynth(a) => {
            let s = &mut cfg.synth;
            set(&mut s.kind, a.kind);
            set(&mut s.n, a.n);
            set(&mut s.d_e, a.d_e);
            if a.k.is_some() {
                s.k = a.k;
            }
            set(&mut s.tau, a.tau);
        }
        Command::IngestCheck(a) => apply_data(&mut cfg.data, a),
        Command::Train(a) => {
            apply_data(&mut cfg.data, &a.data);
            let t = &mut cfg.train;
            set(&mut t.algorithm, a.algorithm);
            set(&mut t.head, a.head);
            set(&mut t.epochs, a.epochs);
            set(&mut t.batch_size, a.batch_size);
            set(&mut t.lr, a.lr);
            set(&mut t.beta, a.beta);
            set(&mut t.checkpoint_every, a.checkpoint_every);
            let g = &mut cfg.agent;
            set(&mut g.lambda, a.lambda);
            set(&mut g.alpha, a.alpha);
            set(&mut g.nu, a.nu);
            set(&mut g.epsilon, a.epsilon);
        }
        Command::Evaluate(a) => {
            apply_data(&mut cfg.data, &a.data);
            if a.checkpoint.is_some() {
                cfg.eval.checkpoint = a.checkpoint.clone();
            }
            cfg.eval.oracle |= a.oracle;
            set(&mut cfg.eval.split, a.split);
            set(&mut cfg.eval.w_c, a.w_c);
        }
        Command::Sweep(a) => {
            apply_data(&mut cfg.data, &a.data);
            if a.checkpoint.is_some() {
                cfg.eval.checkpoint = a.checkpoint.clone();
            }
            cfg.eval.oracle |= a.oracle;
            set(&mut cfg.eval.split, a.split);
            set(&mut cfg.eval.grid, a.grid.clone());
        }
        Command::Compare(a) => {
            if a.reference.is_some() {
                cfg.compare.reference = a.reference.clone();
            }
            if a.candidate.is_some() {
                cfg.compare.candidate = a.candidate.clone();
            }
        }
    }
    cfg.output_dir = Some(cfg.output_dir());
    Ok(cfg)
}

fn require_file(what: &str, p: &Option<PathBuf>) -> CliResult<PathBuf> {
    let p = p
        .clone()
        .ok_or_else(|| CliError::usage(format!("missing {what} path")))?;
    if !p.is_file() {
        return Err(CliError::usage(format!("{what} not found: {}", p.display())));
    }
    Ok(p)
}

/// Checks everything that can be checked without reading data, so that a bad
/// invocation leaves no output behind.
pub fn validate_config(cfg: &RunConfig) -> CliResult<()> {
    let needs_data = matches!(cfg.command.as_str(), "ingest-check" | "train" | "evaluate" | "sweep");
    if needs_data {
        require_file("dataset", &cfg.data.dataset)?;
        if let Some(t) = cfg.data.tau {
            RewardSpec::new(t).map_err(|e| CliError::usage(e.to_string()))?;
        }
        if !cfg.data.hash_embeddings {
            if cfg.data.embeddings_bin.is_some() {
                require_file("embeddings_bin", &cfg.data.embeddings_bin)?;
            }
            if cfg.data.embeddings_index.is_some() {
                require_file("embeddings_index", &cfg.data.embeddings_index)?;
            }
            if cfg.data.embeddings_bin.is_some() != cfg.data.embeddings_index.is_some() {
                return Err(CliError::usage(
                    "embeddings_bin and embeddings_index must be given together",
                ));
            }
        }
    }
    match cfg.command.as_str() {
        "gen-synth" => cfg.synth.spec().validate()?,
        "train" => match cfg.train.algorithm.agent_kind() {
            None => cfg.training_config().validate()?,
            Some(kind) => {
                if cfg.train.epochs == 0 {
                    return Err(CliError::usage("epochs must be at least 1"));
                }
                cfg.agent_config(kind).validate()?
            }
        },
        "evaluate" | "sweep" => {
            if !cfg.eval.oracle {
                require_file("checkpoint", &cfg.eval.checkpoint)?;
            }
            if cfg.command == "evaluate" {
                PreferenceVector::from_cost_weight(cfg.eval.w_c).map_err(|e| CliError::usage(e.to_string()))?;
            } else {
                if cfg.eval.grid.is_empty() {
                    return Err(CliError::usage("sweep grid is empty"));
                }
                if let Some(w) = cfg.eval.grid.iter().find(|w| !(0.0..=1.0).contains(*w)) {
                    return Err(CliError::usage(format!("sweep grid value {w} outside [0, 1]")));
                }
            }
        }
        "compare" => {
            require_file("reference report", &cfg.compare.reference)?;
            require_file("candidate report", &cfg.compare.candidate)?;
        }
        _ => {}
    }
    Ok(())
}

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::data(format!("cannot write {}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(io_error(path))
}

/// Creates the output directory and writes the resolved config into it.
pub fn prepare_output(cfg: &RunConfig) -> CliResult<PathBuf> {
    let out = cfg.output_dir();
    fs::create_dir_all(&out).map_err(io_error(&out))?;
    write_file(&out.join(RUN_CONFIG_FILE), cfg.to_toml())?;
    Ok(out)
}

fn load_dataset(cfg: &RunConfig) -> CliResult<LoggedDataset> {
    let path = cfg.data.dataset.as_deref().expect("validated");
    let format = cfg.data.format.unwrap_or_else(|| LogFormat::from_path(path));
    Ok(ingest(path, format, &cfg.ingest_options())?)
}

fn environment(cfg: &RunConfig) -> CliResult<BanditEnvironment> {
    let ds = Arc::new(load_dataset(cfg)?);
    Ok(match cfg.data.tau {
        Some(t) => BanditEnvironment::new(ds, RewardSpec::new(t).map_err(|e| CliError::usage(e.to_string()))?),
        None => BanditEnvironment::with_default_reward(ds)?,
    })
}

fn cmd_gen_synth(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let spec = cfg.synth.spec();
    let ds = gen_synthetic(&spec, cfg.seed)?;
    let path = out.join(format!("{}.jsonl", spec.kind.name()));
    write_dataset(&ds, &path)?;
    println!(
        "wrote {} records ({} arms, d_e={}) to {}",
        ds.len(),
        ds.num_arms(),
        ds.embedding_dim(),
        path.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    records: usize,
    arms: Vec<String>,
    embedding_dim: usize,
    hashed_embeddings: bool,
    tasks: Vec<String>,
    train: usize,
    test: usize,
    ood: usize,
    tau: f64,
}

fn cmd_ingest_check(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let env = environment(cfg)?;
    let ds = env.dataset();
    let summary = IngestSummary {
        records: ds.len(),
        arms: ds.arms().arms().iter().map(|a| a.id.clone()).collect(),
        embedding_dim: ds.embedding_dim(),
        hashed_embeddings: ds.uses_hashed_embeddings(),
        tasks: ds.tasks().to_vec(),
        train: ds.indices(Split::Train).len(),
        test: ds.indices(Split::Test).len(),
        ood: ds.indices(Split::Ood).len(),
        tau: crate::environment::BanditFeedback::reward_spec(&env).tau(),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&out.join("ingest_summary.json"), &json)?;
    println!("{json}");
    Ok(())
}

fn append_line(buf: &mut Vec<u8>, value: &impl Serialize) {
    serde_json::to_writer(&mut *buf, value).expect("line serializes");
    buf.push(b'\n');
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let env = environment(cfg)?;
    let (d_e, k) = (env.dataset().embedding_dim(), env.dataset().num_arms());
    let every = cfg.train.checkpoint_every;
    let ckpt_dir = out.join("checkpoints");
    if every > 0 {
        fs::create_dir_all(&ckpt_dir).map_err(io_error(&ckpt_dir))?;
    }
    let intermediate = |epoch: usize, ck: &Checkpoint| -> CliResult<()> {
        if every > 0 && epoch.is_multiple_of(every) {
            let p = ckpt_dir.join(format!("epoch_{epoch:04}.json"));
            ck.save(&p)?;
        }
        Ok(())
    };

    let mut trace = Vec::new();
    let mut timings = Vec::new();
    let mut rewards = Vec::new();
    let final_ck = match cfg.train.algorithm.agent_kind() {
        None => {
            let mut trainer = Trainer::new(cfg.training_config(), d_e, k)?;
            for _ in 0..cfg.train.epochs {
                let t = trainer.train_epoch(&env)?;
                let s = &t.epochs[0];
                log::info!(
                    "epoch {}: reward {:.4} entropy {:.4} loss {:.5}",
                    s.epoch,
                    s.mean_reward,
                    s.mean_entropy,
                    s.mean_loss
                );
                rewards.push(s.mean_reward);
                trace.extend_from_slice(t.to_jsonl().as_bytes());
                append_line(
                    &mut timings,
                    &serde_json::json!({"epoch": s.epoch, "wall_clock_secs": t.wall_clock_secs[0]}),
                );
                let ck = Checkpoint::from_policy(trainer.network(), cfg.seed, trainer.adam().steps());
                intermediate(trainer.epochs_done(), &ck)?;
            }
            Checkpoint::from_policy(trainer.network(), cfg.seed, trainer.adam().steps())
        }
        Some(kind) => {
            let mut agent = LinearAgent::new(cfg.agent_config(kind), d_e + 2, k)?;
            let mut rng = SeededRng::new(cfg.seed);
            let per_epoch = crate::environment::BanditFeedback::train_indices(&env).len() as u64;
            for epoch in 0..cfg.train.epochs {
                let started = std::time::Instant::now();
                let t = train_agent(&mut agent, &env, 1, &mut rng)?;
                let r = t.epoch_mean_reward[0];
                log::info!("epoch {epoch}: reward {r:.4}");
                rewards.push(r);
                append_line(&mut trace, &serde_json::json!({"epoch": epoch, "mean_reward": r}));
                append_line(
                    &mut timings,
                    &serde_json::json!({"epoch": epoch, "wall_clock_secs": started.elapsed().as_secs_f64()}),
                );
                let ck = Checkpoint::from_agent(&agent, cfg.seed, per_epoch * (epoch as u64 + 1));
                intermediate(epoch + 1, &ck)?;
            }
            Checkpoint::from_agent(&agent, cfg.seed, per_epoch * cfg.train.epochs as u64)
        }
    };
    final_ck.save(&out.join("checkpoint.json"))?;
    write_file(&out.join("trace.jsonl"), &trace)?;
    write_file(&out.join("timings.jsonl"), &timings)?;
    println!(
        "trained {} for {} epochs: mean reward {:.4} (first epoch) -> {:.4} (last epoch)",
        final_ck.clone().into_model()?.describe(),
        cfg.train.epochs,
        rewards.first().copied().unwrap_or(0.0),
        rewards.last().copied().unwrap_or(0.0)
    );
    println!("checkpoint: {}", out.join("checkpoint.json").display());
    Ok(())
}

fn load_model(cfg: &RunConfig) -> CliResult<(Model, ReportMeta)> {
    let path = cfg.eval.checkpoint.as_deref().expect("validated");
    let ck = Checkpoint::load(path)?;
    let (seed, step) = (ck.seed, ck.step);
    let model = ck.into_model()?;
    let meta = ReportMeta {
        router: model.describe(),
        checkpoint: Some(format!("{}@step{}", model.describe(), step)),
        seed,
        ..Default::default()
    };
    Ok((model, meta))
}

fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let env = environment(cfg)?;
    let pref = PreferenceVector::from_cost_weight(cfg.eval.w_c).map_err(|e| CliError::usage(e.to_string()))?;
    let report = if cfg.eval.oracle {
        let mut r = evaluate_oracle(&env, cfg.eval.split, pref)?;
        r.meta.seed = cfg.seed;
        r
    } else {
        let (model, meta) = load_model(cfg)?;
        let mut r = evaluate(&model, &env, cfg.eval.split, pref)?;
        r.meta = ReportMeta {
            split: r.meta.split,
            preference: r.meta.preference,
            tau: r.meta.tau,
            ..meta
        };
        r
    };
    report.write(&out.join("report.json"), &out.join("report.csv"))?;
    print!("{}", report.render_table());
    println!("mean reward: {:.4}", report.mean_reward);
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let env = environment(cfg)?;
    let split = cfg.eval.split;
    let (points, meta) = if cfg.eval.oracle {
        let meta = ReportMeta {
            router: "oracle".into(),
            seed: cfg.seed,
            ..Default::default()
        };
        (sweep_oracle(&env, split, &cfg.eval.grid)?, meta)
    } else {
        let (model, meta) = load_model(cfg)?;
        (sweep_preferences(&model, &env, split, &cfg.eval.grid)?, meta)
    };
    // Headline numbers are taken at the point closest to the balanced preference.
    let head = points
        .iter()
        .min_by(|a, b| (a.w_c - 0.5).abs().total_cmp(&(b.w_c - 0.5).abs()))
        .expect("non-empty grid");
    let mut report = EvaluationReport::from_tasks(
        ReportMeta {
            split: Some(split),
            preference: Some(PreferenceVector::from_cost_weight(head.w_c).expect("grid validated")),
            tau: Some(crate::environment::BanditFeedback::reward_spec(&env).tau()),
            ..meta
        },
        head.tasks.clone(),
    );
    report.sweep = points;
    report.write(&out.join("sweep.json"), &out.join("sweep.csv"))?;
    println!(
        "{:>6} {:>10} {:>14} {:>12}",
        "w_c", "score (%)", "cost (x1e-3)", "reward"
    );
    for p in &report.sweep {
        println!(
            "{:>6.2} {:>10} {:>14.4} {:>12.4}",
            p.w_c,
            crate::evaluation::fmt_pct(p.score_pct),
            p.cost_usd * 1e3,
            p.mean_reward
        );
    }
    Ok(())
}

fn read_report(path: &Path) -> CliResult<EvaluationReport> {
    let s = fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    EvaluationReport::from_json(&s).map_err(|e| CliError::data(format!("invalid report {}: {e}", path.display())))
}

fn cmd_compare(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let reference = read_report(cfg.compare.reference.as_deref().expect("validated"))?;
    let candidate = read_report(cfg.compare.candidate.as_deref().expect("validated"))?;
    let c = compare(&reference, &candidate)?;
    write_file(
        &out.join("comparison.json"),
        serde_json::to_string_pretty(&c).expect("comparison serializes"),
    )?;
    println!("{}", c.render());
    Ok(())
}

/// Runs a parsed command.
pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = resolve_config(&cli)?;
    validate_config(&cfg)?;
    let out = prepare_output(&cfg)?;
    match cfg.command.as_str() {
        "gen-synth" => cmd_gen_synth(&cfg, &out),
        "ingest-check" => cmd_ingest_check(&cfg, &out),
        "train" => cmd_train(&cfg, &out),
        "evaluate" => cmd_evaluate(&cfg, &out),
        "sweep" => cmd_sweep(&cfg, &out),
        "compare" => cmd_compare(&cfg, &out),
        other => unreachable!("unknown command {other}"),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Errors are reported on stderr.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            e.code
        }
    }
}

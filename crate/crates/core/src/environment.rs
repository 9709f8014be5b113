//! Logged-data bandit simulator and dataset ingestion.
//!
//! Benchmark logs hold the score and cost of *every* arm for each prompt.
//! Learners only ever see them through [`BanditFeedback`], which releases the
//! outcome of the single arm that was chosen. The complete outcome row is
//! available from [`BanditEnvironment::full_outcomes`] and requires an
//! evaluation [`AccessToken`].
//!
//! # Log format
//!
//! JSON-lines. The first non-empty line is a header, every following line is
//! one record:
//!
//! ```text
//! {"arms": [{"id": "small", "name": "Small LM"}, {"id": "large", "name": "Large LM"}], "embedding_dim": 32, "tau": 0.01}
//! {"prompt_id": "p1", "task_id": "gsm8k", "scores": [0.0, 1.0], "costs": [0.0001, 0.003]}
//! ```
//!
//! `embedding_dim` and `tau` are optional. Embeddings come from a sidecar pair
//! next to the log (`<stem>.emb.bin` + `<stem>.emb.json`): little-endian `f32`
//! values and a JSON index `{"dim": d, "offsets": {"<prompt_id>": byte_offset}}`.
//! Without a sidecar a seeded hash of the prompt id provides a 32-wide
//! stand-in embedding and the dataset is flagged as such.
//!
//! The CSV adapter reads RouterBench-style exports: a `sample_id` (or
//! `prompt_id`) column, an `eval_name` (or `task_id`) column, and for every
//! arm `X` a score column `X` plus a cost column `X|total_cost`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{ArmDescriptor, ArmSet, DomainError, Outcome, RewardSpec};
use crate::numerics::{quantile, SeededRng};

/// Width of the hash-featurizer stand-in embedding.
pub const HASH_EMBEDDING_DIM: usize = 32;
/// Share of each task's prompts assigned to the training split.
pub const TRAIN_FRACTION: f64 = 0.8;
/// Quantile of training-split costs used as the default cost cap.
pub const DEFAULT_TAU_QUANTILE: f64 = 0.95;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: record `{prompt_id}`: field `{field}`: {message}")]
    Schema {
        line: usize,
        prompt_id: String,
        field: String,
        message: String,
    },
    #[error("malformed log: {0}")]
    Malformed(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("record index {index} out of range ({len} records)")]
    RecordOutOfRange { index: usize, len: usize },
    #[error("arm {arm} out of range ({k} arms)")]
    ArmOutOfRange { arm: usize, k: usize },
    #[error("full outcome rows require an evaluation capability")]
    Capability,
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, EnvError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EnvError + '_ {
    move |source| EnvError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One prompt with the outcome of every arm.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedRecord {
    pub prompt_id: String,
    pub task_id: String,
    pub embedding: Vec<f64>,
    pub outcomes: Vec<Outcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    /// Records of tasks held out from training entirely.
    Ood,
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "ood" => Ok(Split::Ood),
            other => Err(format!("unknown split `{other}` (train|test|ood)")),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Ood => "ood",
        })
    }
}

/// Stable 64-bit hash of `(seed, tag, key)`.
fn stable_hash(seed: u64, tag: &str, key: &str, block: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update(seed.to_le_bytes());
    h.update((key.len() as u64).to_le_bytes());
    h.update(key.as_bytes());
    h.update(block.to_le_bytes());
    h.finalize().into()
}

fn unit_from_u64(x: u64) -> f64 {
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// Whether `prompt_id` belongs to the training split under `seed`.
pub fn in_train_split(prompt_id: &str, seed: u64) -> bool {
    let digest = stable_hash(seed, "split", prompt_id, 0);
    let x = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    unit_from_u64(x) < TRAIN_FRACTION
}

/// Deterministic stand-in embedding in `[-1, 1]^dim` derived from the prompt id.
pub fn hash_embedding(prompt_id: &str, seed: u64, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    let mut block = 0;
    while out.len() < dim {
        let digest = stable_hash(seed, "featurizer", prompt_id, block);
        for chunk in digest.chunks_exact(8) {
            if out.len() == dim {
                break;
            }
            let x = u64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            out.push(2.0 * unit_from_u64(x) - 1.0);
        }
        block += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset {
    arms: ArmSet,
    d_e: usize,
    records: Vec<LoggedRecord>,
    splits: Vec<Split>,
    tasks: Vec<String>,
    split_seed: u64,
    hashed_embeddings: bool,
    declared_tau: Option<f64>,
}

impl LoggedDataset {
    /// Validates the records and assigns the train/test split.
    pub fn new(arms: ArmSet, d_e: usize, records: Vec<LoggedRecord>, split_seed: u64) -> Result<Self> {
        if d_e == 0 {
            return Err(EnvError::Malformed("embedding dimension must be positive".into()));
        }
        let mut tasks: Vec<String> = Vec::new();
        for r in &records {
            if r.outcomes.len() != arms.len() {
                return Err(EnvError::Malformed(format!(
                    "record `{}` has {} outcomes for {} arms",
                    r.prompt_id,
                    r.outcomes.len(),
                    arms.len()
                )));
            }
            if r.embedding.len() != d_e {
                return Err(EnvError::Malformed(format!(
                    "record `{}` has embedding width {} (expected {d_e})",
                    r.prompt_id,
                    r.embedding.len()
                )));
            }
            if r.embedding.iter().any(|x| !x.is_finite()) {
                return Err(EnvError::Malformed(format!(
                    "record `{}` has a non-finite embedding entry",
                    r.prompt_id
                )));
            }
            if !tasks.contains(&r.task_id) {
                tasks.push(r.task_id.clone());
            }
        }
        let splits = records
            .iter()
            .map(|r| {
                if in_train_split(&r.prompt_id, split_seed) {
                    Split::Train
                } else {
                    Split::Test
                }
            })
            .collect();
        Ok(Self {
            arms,
            d_e,
            records,
            splits,
            tasks,
            split_seed,
            hashed_embeddings: false,
            declared_tau: None,
        })
    }

    /// Moves every record of the named tasks into the out-of-distribution split.
    pub fn with_ood_tasks<S: AsRef<str>>(mut self, tasks: &[S]) -> Self {
        for (r, s) in self.records.iter().zip(self.splits.iter_mut()) {
            if tasks.iter().any(|t| t.as_ref() == r.task_id) {
                *s = Split::Ood;
            }
        }
        self
    }

    pub fn with_declared_tau(mut self, tau: Option<f64>) -> Self {
        self.declared_tau = tau;
        self
    }

    pub fn arms(&self) -> &ArmSet {
        &self.arms
    }

    pub fn num_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.d_e
    }

    pub fn records(&self) -> &[LoggedRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split_of(&self, index: usize) -> Split {
        self.splits[index]
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed
    }

    /// Task ids in order of first appearance.
    pub fn tasks(&self) -> &[String] {
        &self.tasks
    }

    pub fn uses_hashed_embeddings(&self) -> bool {
        self.hashed_embeddings
    }

    pub fn declared_tau(&self) -> Option<f64> {
        self.declared_tau
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len()).filter(|i| self.splits[*i] == split).collect()
    }

    /// Cost cap: the declared `tau` if present, otherwise the 95th percentile
    /// of all training-split arm costs (falling back to the maximum cost, then 1).
    pub fn default_reward_spec(&self) -> Result<RewardSpec> {
        if let Some(t) = self.declared_tau {
            return Ok(RewardSpec::new(t)?);
        }
        let mut costs: Vec<f64> = self
            .indices(Split::Train)
            .into_iter()
            .flat_map(|i| self.records[i].outcomes.iter().map(|o| o.cost()))
            .collect();
        if costs.is_empty() {
            costs = self
                .records
                .iter()
                .flat_map(|r| r.outcomes.iter().map(|o| o.cost()))
                .collect();
        }
        let q = quantile(&costs, DEFAULT_TAU_QUANTILE).unwrap_or(0.0);
        let tau = if q > 0.0 {
            q
        } else {
            let max = costs.iter().copied().fold(0.0, f64::max);
            if max > 0.0 {
                max
            } else {
                1.0
            }
        };
        Ok(RewardSpec::new(tau)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Training,
    Evaluation,
}

/// Capability presented when asking for complete outcome rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessToken {
    role: Role,
}

impl AccessToken {
    pub fn evaluation() -> Self {
        Self { role: Role::Evaluation }
    }

    pub(crate) fn training() -> Self {
        Self { role: Role::Training }
    }

    pub fn is_evaluation(&self) -> bool {
        self.role == Role::Evaluation
    }
}

/// The only view of the environment that learners get: contexts, and the
/// outcome of the arm they chose.
pub trait BanditFeedback {
    fn num_arms(&self) -> usize;
    fn embedding_dim(&self) -> usize;
    fn reward_spec(&self) -> RewardSpec;
    fn train_indices(&self) -> Vec<usize>;
    fn embedding(&self, record: usize) -> Result<&[f64]>;
    /// Releases the outcome of `arm` on `record`, and nothing else.
    fn step(&self, record: usize, arm: usize) -> Result<Outcome>;
}

/// Replays a [`LoggedDataset`] under bandit feedback.
#[derive(Debug)]
pub struct BanditEnvironment {
    dataset: Arc<LoggedDataset>,
    reward: RewardSpec,
    steps: AtomicU64,
}

impl BanditEnvironment {
    pub fn new(dataset: Arc<LoggedDataset>, reward: RewardSpec) -> Self {
        Self {
            dataset,
            reward,
            steps: AtomicU64::new(0),
        }
    }

    /// Environment with the dataset's default cost cap.
    pub fn with_default_reward(dataset: Arc<LoggedDataset>) -> Result<Self> {
        let reward = dataset.default_reward_spec()?;
        Ok(Self::new(dataset, reward))
    }

    pub fn dataset(&self) -> &LoggedDataset {
        &self.dataset
    }

    pub fn dataset_arc(&self) -> Arc<LoggedDataset> {
        Arc::clone(&self.dataset)
    }

    /// Number of outcomes released through [`BanditFeedback::step`].
    pub fn audit_count(&self) -> u64 {
        self.steps.load(Ordering::SeqCst)
    }

    fn record(&self, index: usize) -> Result<&LoggedRecord> {
        self.dataset.records.get(index).ok_or(EnvError::RecordOutOfRange {
            index,
            len: self.dataset.records.len(),
        })
    }

    /// Complete outcome row for evaluation code.
    pub fn full_outcomes(&self, record: usize, token: &AccessToken) -> Result<&[Outcome]> {
        if !token.is_evaluation() {
            return Err(EnvError::Capability);
        }
        Ok(&self.record(record)?.outcomes)
    }
}

impl BanditFeedback for BanditEnvironment {
    fn num_arms(&self) -> usize {
        self.dataset.num_arms()
    }

    fn embedding_dim(&self) -> usize {
        self.dataset.d_e
    }

    fn reward_spec(&self) -> RewardSpec {
        self.reward
    }

    fn train_indices(&self) -> Vec<usize> {
        self.dataset.indices(Split::Train)
    }

    fn embedding(&self, record: usize) -> Result<&[f64]> {
        Ok(&self.record(record)?.embedding)
    }

    fn step(&self, record: usize, arm: usize) -> Result<Outcome> {
        let r = self.record(record)?;
        let k = r.outcomes.len();
        let outcome = *r.outcomes.get(arm).ok_or(EnvError::ArmOutOfRange { arm, k })?;
        self.steps.fetch_add(1, Ordering::SeqCst);
        Ok(outcome)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    Jsonl,
    Csv,
}

impl LogFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => LogFormat::Csv,
            _ => LogFormat::Jsonl,
        }
    }
}

impl std::str::FromStr for LogFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "jsonl" | "json-lines" => Ok(LogFormat::Jsonl),
            "csv" => Ok(LogFormat::Csv),
            other => Err(format!("unknown log format `{other}` (jsonl|csv)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum EmbeddingSource {
    /// Use `<stem>.emb.bin`/`<stem>.emb.json` when both exist, else the hash featurizer.
    #[default]
    Auto,
    Sidecar {
        bin: PathBuf,
        index: PathBuf,
    },
    Hash,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestOptions {
    /// Reject out-of-range scores instead of clamping them.
    pub strict: bool,
    pub embeddings: EmbeddingSource,
    pub split_seed: u64,
    pub ood_tasks: Vec<String>,
    pub featurizer_seed: u64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            strict: false,
            embeddings: EmbeddingSource::Auto,
            split_seed: 0,
            ood_tasks: Vec::new(),
            featurizer_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogHeader {
    pub arms: Vec<ArmDescriptor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogLine {
    pub prompt_id: String,
    pub task_id: String,
    pub scores: Vec<f64>,
    pub costs: Vec<f64>,
}

/// Paths of the embedding sidecar belonging to a log file.
pub fn sidecar_paths(log: &Path) -> (PathBuf, PathBuf) {
    (log.with_extension("emb.bin"), log.with_extension("emb.json"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SidecarIndex {
    dim: usize,
    offsets: BTreeMap<String, u64>,
}

/// Embeddings keyed by prompt id, widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub rows: BTreeMap<String, Vec<f64>>,
}

pub fn read_sidecar(bin: &Path, index: &Path) -> Result<EmbeddingTable> {
    let idx: SidecarIndex = serde_json::from_slice(&fs::read(index).map_err(io_err(index))?)
        .map_err(|e| EnvError::Malformed(format!("embedding index {}: {e}", index.display())))?;
    let bytes = fs::read(bin).map_err(io_err(bin))?;
    let width = idx.dim * 4;
    let mut rows = BTreeMap::new();
    for (id, off) in idx.offsets {
        let start = off as usize;
        let slice = bytes.get(start..start + width).ok_or_else(|| {
            EnvError::Malformed(format!("embedding for `{id}` at byte {start} runs past end of sidecar"))
        })?;
        let v: Vec<f64> = slice
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        rows.insert(id, v);
    }
    Ok(EmbeddingTable { dim: idx.dim, rows })
}

/// Writes embeddings as little-endian `f32` with a JSON offset index.
pub fn write_sidecar<'a, I>(bin: &Path, index: &Path, dim: usize, rows: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a [f64])>,
{
    let mut data = Vec::new();
    let mut offsets = BTreeMap::new();
    for (id, emb) in rows {
        if emb.len() != dim {
            return Err(EnvError::Malformed(format!(
                "embedding for `{id}` has width {}",
                emb.len()
            )));
        }
        offsets.insert(id.to_string(), data.len() as u64);
        for x in emb {
            data.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    fs::write(bin, &data).map_err(io_err(bin))?;
    let idx = serde_json::to_vec(&SidecarIndex { dim, offsets }).expect("index serializes");
    fs::write(index, idx).map_err(io_err(index))?;
    Ok(())
}

struct RawRecord {
    line: usize,
    prompt_id: String,
    task_id: String,
    scores: Vec<f64>,
    costs: Vec<f64>,
}

fn schema(line: usize, prompt_id: &str, field: &str, message: impl Into<String>) -> EnvError {
    EnvError::Schema {
        line,
        prompt_id: prompt_id.to_string(),
        field: field.to_string(),
        message: message.into(),
    }
}

fn read_jsonl(path: &Path) -> Result<(LogHeader, Vec<RawRecord>)> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut header: Option<LogHeader> = None;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            let h: LogHeader = serde_json::from_str(&line)
                .map_err(|e| EnvError::Malformed(format!("line {line_no}: expected header object with `arms`: {e}")))?;
            header = Some(h);
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| EnvError::Malformed(format!("line {line_no}: invalid JSON: {e}")))?;
        let pid = value
            .get("prompt_id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| schema(line_no, "?", "prompt_id", "missing or not a string"))?
            .to_string();
        let rec: LogLine = serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            let field = ["task_id", "scores", "costs"]
                .into_iter()
                .find(|f| msg.contains(f))
                .unwrap_or("record");
            schema(line_no, &pid, field, msg)
        })?;
        records.push(RawRecord {
            line: line_no,
            prompt_id: rec.prompt_id,
            task_id: rec.task_id,
            scores: rec.scores,
            costs: rec.costs,
        });
    }
    let header = header.ok_or_else(|| EnvError::Malformed("empty log: no header line".into()))?;
    Ok((header, records))
}

fn read_csv(path: &Path) -> Result<(LogHeader, Vec<RawRecord>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| EnvError::Malformed(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| EnvError::Malformed(format!("{}: {e}", path.display())))?
        .clone();
    let find = |names: &[&str]| headers.iter().position(|h| names.contains(&h));
    let pid_col = find(&["prompt_id", "sample_id"])
        .ok_or_else(|| EnvError::Malformed("CSV needs a `prompt_id` or `sample_id` column".into()))?;
    let task_col = find(&["task_id", "eval_name"])
        .ok_or_else(|| EnvError::Malformed("CSV needs a `task_id` or `eval_name` column".into()))?;
    let mut arm_cols = Vec::new();
    for (ci, h) in headers.iter().enumerate() {
        if let Some(arm) = h.strip_suffix("|total_cost") {
            let score_col = headers
                .iter()
                .position(|x| x == arm)
                .ok_or_else(|| EnvError::Malformed(format!("cost column `{h}` has no score column `{arm}`")))?;
            arm_cols.push((arm.to_string(), score_col, ci));
        }
    }
    let header = LogHeader {
        arms: arm_cols
            .iter()
            .map(|(id, _, _)| ArmDescriptor {
                id: id.clone(),
                name: id.clone(),
            })
            .collect(),
        embedding_dim: None,
        tau: None,
    };
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| EnvError::Malformed(format!("line {line}: {e}")))?;
        let pid = row.get(pid_col).unwrap_or_default().to_string();
        let task = row.get(task_col).unwrap_or_default().to_string();
        let mut scores = Vec::with_capacity(arm_cols.len());
        let mut costs = Vec::with_capacity(arm_cols.len());
        for (arm, sc, cc) in &arm_cols {
            let parse = |col: usize, field: String| -> Result<f64> {
                row.get(col)
                    .unwrap_or_default()
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| schema(line, &pid, &field, e.to_string()))
            };
            scores.push(parse(*sc, arm.clone())?);
            costs.push(parse(*cc, format!("{arm}|total_cost"))?);
        }
        records.push(RawRecord {
            line,
            prompt_id: pid,
            task_id: task,
            scores,
            costs,
        });
    }
    Ok((header, records))
}

/// Reads and validates a benchmark log.
pub fn ingest(path: &Path, format: LogFormat, opts: &IngestOptions) -> Result<LoggedDataset> {
    let (header, raw) = match format {
        LogFormat::Jsonl => read_jsonl(path)?,
        LogFormat::Csv => read_csv(path)?,
    };
    let arms = ArmSet::new(header.arms.clone())?;
    let k = arms.len();

    let table = match &opts.embeddings {
        EmbeddingSource::Hash => None,
        EmbeddingSource::Sidecar { bin, index } => Some(read_sidecar(bin, index)?),
        EmbeddingSource::Auto => {
            let (bin, index) = sidecar_paths(path);
            if bin.exists() && index.exists() {
                Some(read_sidecar(&bin, &index)?)
            } else {
                None
            }
        }
    };
    let d_e = match &table {
        Some(t) => t.dim,
        None => HASH_EMBEDDING_DIM,
    };
    if let (Some(declared), Some(_)) = (header.embedding_dim, &table) {
        if declared != d_e {
            return Err(EnvError::Malformed(format!(
                "header declares embedding_dim {declared} but sidecar has {d_e}"
            )));
        }
    }
    if table.is_none() {
        log::warn!(
            "{}: no embedding sidecar, using {HASH_EMBEDDING_DIM}-wide hash features",
            path.display()
        );
    }

    let mut seen = std::collections::BTreeSet::new();
    let mut records = Vec::with_capacity(raw.len());
    for r in raw {
        if !seen.insert(r.prompt_id.clone()) {
            return Err(schema(r.line, &r.prompt_id, "prompt_id", "duplicate prompt id"));
        }
        if r.scores.len() != k {
            return Err(schema(
                r.line,
                &r.prompt_id,
                "scores",
                format!("expected {k} entries, got {}", r.scores.len()),
            ));
        }
        if r.costs.len() != k {
            return Err(schema(
                r.line,
                &r.prompt_id,
                "costs",
                format!("expected {k} entries, got {}", r.costs.len()),
            ));
        }
        let mut outcomes = Vec::with_capacity(k);
        for (a, (&q, &c)) in r.scores.iter().zip(&r.costs).enumerate() {
            let arm_id = &arms.arms()[a].id;
            if !q.is_finite() {
                return Err(schema(
                    r.line,
                    &r.prompt_id,
                    "scores",
                    format!("non-finite score for arm `{arm_id}`"),
                ));
            }
            let q = if (0.0..=1.0).contains(&q) {
                q
            } else if opts.strict {
                return Err(schema(
                    r.line,
                    &r.prompt_id,
                    "scores",
                    format!("score {q} for arm `{arm_id}` outside [0, 1]"),
                ));
            } else {
                log::warn!(
                    "record `{}`: clamping score {q} for arm `{arm_id}` into [0, 1]",
                    r.prompt_id
                );
                q.clamp(0.0, 1.0)
            };
            if !c.is_finite() || c < 0.0 {
                return Err(schema(
                    r.line,
                    &r.prompt_id,
                    "costs",
                    format!("cost {c} for arm `{arm_id}` must be finite and non-negative"),
                ));
            }
            outcomes.push(Outcome::new(q, c)?);
        }
        let embedding = match &table {
            Some(t) => t.rows.get(&r.prompt_id).cloned().ok_or_else(|| {
                schema(
                    r.line,
                    &r.prompt_id,
                    "embedding",
                    "no embedding in sidecar for this prompt",
                )
            })?,
            None => hash_embedding(&r.prompt_id, opts.featurizer_seed, HASH_EMBEDDING_DIM),
        };
        records.push(LoggedRecord {
            prompt_id: r.prompt_id,
            task_id: r.task_id,
            embedding,
            outcomes,
        });
    }

    let mut ds = LoggedDataset::new(arms, d_e, records, opts.split_seed)?
        .with_ood_tasks(&opts.ood_tasks)
        .with_declared_tau(header.tau);
    ds.hashed_embeddings = table.is_none();
    Ok(ds)
}

/// Writes a dataset as a JSON-lines log plus its embedding sidecar.
pub fn write_dataset(ds: &LoggedDataset, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    let header = LogHeader {
        arms: ds.arms.arms().to_vec(),
        embedding_dim: Some(ds.d_e),
        tau: ds.declared_tau,
    };
    serde_json::to_writer(&mut out, &header).expect("header serializes");
    out.push(b'\n');
    for r in &ds.records {
        let line = LogLine {
            prompt_id: r.prompt_id.clone(),
            task_id: r.task_id.clone(),
            scores: r.outcomes.iter().map(|o| o.score()).collect(),
            costs: r.outcomes.iter().map(|o| o.cost()).collect(),
        };
        serde_json::to_writer(&mut out, &line).expect("record serializes");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&out).map_err(io_err(path))?;
    let (bin, index) = sidecar_paths(path);
    write_sidecar(
        &bin,
        &index,
        ds.d_e,
        ds.records
            .iter()
            .map(|r| (r.prompt_id.as_str(), r.embedding.as_slice())),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// `q_a = sigmoid(θ_a·e)`, cost fixed per arm and increasing with the arm index.
    Linear,
    /// Two arms: high quality at cost `tau` versus lower quality for free.
    PiecewisePreference,
    /// Which of two arms is good depends on the parity of embedding signs.
    NonlinearXor,
}

impl std::str::FromStr for SyntheticKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear" => Ok(SyntheticKind::Linear),
            "piecewise" | "piecewise-preference" => Ok(SyntheticKind::PiecewisePreference),
            "xor" | "nonlinear-xor" => Ok(SyntheticKind::NonlinearXor),
            other => Err(format!(
                "unknown generator `{other}` (linear|piecewise-preference|nonlinear-xor)"
            )),
        }
    }
}

impl SyntheticKind {
    pub fn name(&self) -> &'static str {
        match self {
            SyntheticKind::Linear => "linear",
            SyntheticKind::PiecewisePreference => "piecewise-preference",
            SyntheticKind::NonlinearXor => "nonlinear-xor",
        }
    }
}

/// Score and cost of the piecewise generator's arms.
pub const PIECEWISE_SCORES: [f64; 2] = [0.9, 0.5];
/// Costs of the piecewise generator's arms as multiples of `tau`.
pub const PIECEWISE_COST_FRACTIONS: [f64; 2] = [1.0, 0.0];
/// Score of the cheap fallback arm in the xor generator.
pub const XOR_FALLBACK_SCORE: f64 = 0.35;
/// Cost of the xor generator's two parity arms as a fraction of `tau`.
pub const XOR_PARITY_COST_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub k: usize,
    pub d_e: usize,
    pub n: usize,
    /// Cost cap recorded in the log header; arm costs are expressed against it.
    pub tau: f64,
}

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind, k: usize, d_e: usize, n: usize) -> Self {
        Self {
            kind,
            k,
            d_e,
            n,
            tau: 0.01,
        }
    }

    pub fn piecewise(n: usize, d_e: usize) -> Self {
        Self::new(SyntheticKind::PiecewisePreference, 2, d_e, n)
    }

    pub fn xor(n: usize, d_e: usize) -> Self {
        Self::new(SyntheticKind::NonlinearXor, 3, d_e, n)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EnvError::InvalidSpec(m.to_string()));
        if self.n == 0 {
            return bad("n must be positive");
        }
        if self.d_e == 0 {
            return bad("d_e must be positive");
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad("tau must be positive");
        }
        match self.kind {
            SyntheticKind::Linear if self.k < 2 => bad("linear generator needs k >= 2"),
            SyntheticKind::PiecewisePreference if self.k != 2 => bad("piecewise generator needs k = 2"),
            SyntheticKind::NonlinearXor if !(2..=3).contains(&self.k) => bad("xor generator needs k in {2, 3}"),
            SyntheticKind::NonlinearXor if self.d_e < 2 => bad("xor generator needs d_e >= 2"),
            _ => Ok(()),
        }
    }

    /// Cost weight above which the cheap arm is optimal in the piecewise generator.
    pub fn piecewise_threshold() -> f64 {
        let dq = PIECEWISE_SCORES[0] - PIECEWISE_SCORES[1];
        let dc = PIECEWISE_COST_FRACTIONS[0] - PIECEWISE_COST_FRACTIONS[1];
        dq / (dq + dc)
    }
}

/// Parity label used by the xor generator: `true` when arm 0 is the good arm.
pub fn xor_parity(embedding: &[f64]) -> bool {
    (embedding[0] >= 0.0) == (embedding[1] >= 0.0)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Deterministic synthetic log whose optimal arm is known in closed form.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<LoggedDataset> {
    spec.validate()?;
    let mut rng = SeededRng::new(seed);
    let arms = ArmSet::new(
        (0..spec.k)
            .map(|a| ArmDescriptor {
                id: format!("arm-{a}"),
                name: format!("synthetic arm {a}"),
            })
            .collect(),
    )?;
    let thetas: Vec<Vec<f64>> = match spec.kind {
        SyntheticKind::Linear => {
            let scale = 3.0 / (spec.d_e as f64).sqrt();
            (0..spec.k)
                .map(|_| (0..spec.d_e).map(|_| scale * rng.standard_normal()).collect())
                .collect()
        }
        _ => Vec::new(),
    };
    let tau = spec.tau;
    let mut records = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let embedding: Vec<f64> = (0..spec.d_e).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let outcomes = match spec.kind {
            SyntheticKind::Linear => thetas
                .iter()
                .enumerate()
                .map(|(a, th)| {
                    let q = sigmoid(crate::numerics::dot(th, &embedding));
                    Outcome::new(q, tau * a as f64 / (spec.k - 1) as f64)
                })
                .collect::<std::result::Result<Vec<_>, _>>()?,
            SyntheticKind::PiecewisePreference => (0..2)
                .map(|a| Outcome::new(PIECEWISE_SCORES[a], tau * PIECEWISE_COST_FRACTIONS[a]))
                .collect::<std::result::Result<Vec<_>, _>>()?,
            SyntheticKind::NonlinearXor => {
                let arm0_good = xor_parity(&embedding);
                let c = tau * XOR_PARITY_COST_FRACTION;
                let mut v = vec![
                    Outcome::new(if arm0_good { 1.0 } else { 0.0 }, c)?,
                    Outcome::new(if arm0_good { 0.0 } else { 1.0 }, c)?,
                ];
                if spec.k == 3 {
                    v.push(Outcome::new(XOR_FALLBACK_SCORE, 0.0)?);
                }
                v
            }
        };
        records.push(LoggedRecord {
            prompt_id: format!("{}-{i:06}", spec.kind.name()),
            task_id: spec.kind.name().to_string(),
            embedding,
            outcomes,
        });
    }
    Ok(LoggedDataset::new(arms, spec.d_e, records, seed)?.with_declared_tau(Some(tau)))
}

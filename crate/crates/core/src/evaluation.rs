//! Deterministic evaluation of routers on logged data.
//!
//! Routers act greedily (argmax) for a fixed preference; the chosen arm's
//! score and cost are read from the full outcome row. Reports hold per-task
//! means (score in percent, cost in USD) and an unweighted average across
//! tasks, plus optional preference-sweep curves.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandits::{agent_features, BanditError, LinearAgent};
use crate::checkpoint::Model;
use crate::domain::{compute_reward, Context, DomainError, Outcome, PreferenceVector, RewardSpec};
use crate::environment::{AccessToken, BanditEnvironment, EnvError, Split};
use crate::policy::{argmax, select_argmax, PolicyError, PolicyNetwork};

/// Cost weights swept by default.
pub const DEFAULT_SWEEP_GRID: [f64; 7] = [0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Agent(#[from] BanditError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("split `{0}` has no records")]
    EmptySplit(Split),
    #[error("router expects d_e={router_d_e}, k={router_k}; dataset has d_e={data_d_e}, k={data_k}")]
    ShapeMismatch {
        router_d_e: usize,
        router_k: usize,
        data_d_e: usize,
        data_k: usize,
    },
    #[error("cannot compare: {0}")]
    Incomparable(String),
    #[error("sweep grid value {0} outside [0, 1]")]
    InvalidGrid(f64),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Deterministic arm choice for a context.
pub trait Router {
    fn route(&self, embedding: &[f64], pref: &PreferenceVector) -> Result<usize>;
    /// `(d_e, k)` the router was built for, when it has a fixed shape.
    fn shape(&self) -> Option<(usize, usize)> {
        None
    }
    fn name(&self) -> String;
}

impl Router for PolicyNetwork {
    fn route(&self, embedding: &[f64], pref: &PreferenceVector) -> Result<usize> {
        Ok(select_argmax(&self.forward(&Context::new(embedding, *pref)?)?))
    }

    fn shape(&self) -> Option<(usize, usize)> {
        Some((self.dims().d_e, self.dims().k))
    }

    fn name(&self) -> String {
        format!("reinforce-{}", self.kind())
    }
}

impl Router for LinearAgent {
    fn route(&self, embedding: &[f64], pref: &PreferenceVector) -> Result<usize> {
        Ok(self.greedy(&agent_features(embedding, pref))?)
    }

    fn shape(&self) -> Option<(usize, usize)> {
        Some((self.dim() - 2, self.num_arms()))
    }

    fn name(&self) -> String {
        self.kind().to_string()
    }
}

impl Router for Model {
    fn route(&self, embedding: &[f64], pref: &PreferenceVector) -> Result<usize> {
        match self {
            Model::Policy(n) => n.route(embedding, pref),
            Model::Agent(a) => a.route(embedding, pref),
        }
    }

    fn shape(&self) -> Option<(usize, usize)> {
        Some((self.embedding_dim(), self.num_arms()))
    }

    fn name(&self) -> String {
        self.describe()
    }
}

/// Always routes to the same arm (e.g. "smallest" or "largest" model rows).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedArm(pub usize);

impl Router for FixedArm {
    fn route(&self, _: &[f64], _: &PreferenceVector) -> Result<usize> {
        Ok(self.0)
    }

    fn name(&self) -> String {
        format!("fixed-arm-{}", self.0)
    }
}

/// Best arm per record by exhaustive reward comparison on the full row.
/// Ties go to the lowest index.
pub fn oracle_arm(row: &[Outcome], pref: &PreferenceVector, spec: &RewardSpec) -> Result<usize> {
    let rewards = row
        .iter()
        .map(|o| compute_reward(pref, o, spec))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(argmax(&rewards))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task: String,
    pub n: usize,
    pub score_pct: f64,
    pub cost_usd: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub w_c: f64,
    pub score_pct: f64,
    pub cost_usd: f64,
    pub mean_reward: f64,
    pub tasks: Vec<TaskRow>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub router: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preference: Option<PreferenceVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub meta: ReportMeta,
    pub tasks: Vec<TaskRow>,
    /// Unweighted mean of per-task scores.
    pub avg_score_pct: f64,
    /// Unweighted mean of per-task costs.
    pub avg_cost_usd: f64,
    pub mean_reward: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepPoint>,
}

/// Unweighted means of per-task `(score_pct, cost_usd, mean_reward)`.
pub fn aggregate(rows: &[TaskRow]) -> (f64, f64, f64) {
    if rows.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = rows.len() as f64;
    (
        rows.iter().map(|r| r.score_pct).sum::<f64>() / n,
        rows.iter().map(|r| r.cost_usd).sum::<f64>() / n,
        rows.iter().map(|r| r.mean_reward).sum::<f64>() / n,
    )
}

/// Two-decimal rendering used in tables.
pub fn fmt_pct(x: f64) -> String {
    format!("{x:.2}")
}

impl EvaluationReport {
    pub fn from_tasks(meta: ReportMeta, tasks: Vec<TaskRow>) -> Self {
        let (avg_score_pct, avg_cost_usd, mean_reward) = aggregate(&tasks);
        Self {
            meta,
            tasks,
            avg_score_pct,
            avg_cost_usd,
            mean_reward,
            sweep: Vec::new(),
        }
    }

    /// Report built from published per-task scores (costs unknown → 0).
    pub fn from_scores(router: &str, scores: &[(&str, f64)]) -> Self {
        let tasks = scores
            .iter()
            .map(|(t, s)| TaskRow {
                task: t.to_string(),
                n: 0,
                score_pct: *s,
                cost_usd: 0.0,
                mean_reward: 0.0,
            })
            .collect();
        Self::from_tasks(
            ReportMeta {
                router: router.into(),
                ..Default::default()
            },
            tasks,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// `task,w_c,score_pct,cost_usd`: one row per task at the evaluated
    /// preference, or per task and grid point for a sweep.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,w_c,score_pct,cost_usd\n");
        if self.sweep.is_empty() {
            let wc = self.meta.preference.map(|p| p.cost()).unwrap_or(0.5);
            for t in &self.tasks {
                let _ = writeln!(out, "{},{},{},{}", t.task, wc, fmt_pct(t.score_pct), t.cost_usd);
            }
        } else {
            out.push_str(&sweep_csv_rows(&self.sweep));
        }
        out
    }

    /// Plain-text table; costs scaled by 10³.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>10} {:>14} {:>8}",
            "task", "score (%)", "cost (x1e-3)", "n"
        );
        for t in &self.tasks {
            let _ = writeln!(
                out,
                "{:<24} {:>10} {:>14.4} {:>8}",
                t.task,
                fmt_pct(t.score_pct),
                t.cost_usd * 1e3,
                t.n
            );
        }
        let _ = writeln!(
            out,
            "{:<24} {:>10} {:>14.4}",
            "Avg",
            fmt_pct(self.avg_score_pct),
            self.avg_cost_usd * 1e3
        );
        out
    }

    pub fn write(&self, json: &Path, csv: &Path) -> Result<()> {
        let w = |p: &Path, s: String| {
            std::fs::write(p, s).map_err(|source| EvalError::Io {
                path: p.to_path_buf(),
                source,
            })
        };
        w(json, self.to_json())?;
        w(csv, self.to_csv())
    }
}

fn sweep_csv_rows(points: &[SweepPoint]) -> String {
    let mut out = String::new();
    for p in points {
        for t in &p.tasks {
            let _ = writeln!(out, "{},{},{},{}", t.task, p.w_c, fmt_pct(t.score_pct), t.cost_usd);
        }
    }
    out
}

/// CSV for a sweep curve.
pub fn sweep_to_csv(points: &[SweepPoint]) -> String {
    format!("task,w_c,score_pct,cost_usd\n{}", sweep_csv_rows(points))
}

fn check_shape(router: &dyn Router, env: &BanditEnvironment) -> Result<()> {
    if let Some((d_e, k)) = router.shape() {
        let ds = env.dataset();
        if d_e != ds.embedding_dim() || k != ds.num_arms() {
            return Err(EvalError::ShapeMismatch {
                router_d_e: d_e,
                router_k: k,
                data_d_e: ds.embedding_dim(),
                data_k: ds.num_arms(),
            });
        }
    }
    Ok(())
}

/// Per-task rows for an arbitrary per-record arm chooser.
fn task_rows<F>(env: &BanditEnvironment, split: Split, pref: &PreferenceVector, mut choose: F) -> Result<Vec<TaskRow>>
where
    F: FnMut(usize, &[f64], &[Outcome]) -> Result<usize>,
{
    let token = AccessToken::evaluation();
    let ds = env.dataset();
    let idx = ds.indices(split);
    if idx.is_empty() {
        return Err(EvalError::EmptySplit(split));
    }
    let spec = crate::environment::BanditFeedback::reward_spec(env);
    // (n, score sum, cost sum, reward sum) per task, in registry order.
    let mut acc: Vec<(usize, f64, f64, f64)> = vec![(0, 0.0, 0.0, 0.0); ds.tasks().len()];
    for i in idx {
        let rec = &ds.records()[i];
        let row = env.full_outcomes(i, &token)?;
        let arm = choose(i, &rec.embedding, row)?;
        let o = row.get(arm).ok_or(EnvError::ArmOutOfRange { arm, k: row.len() })?;
        let t = ds
            .tasks()
            .iter()
            .position(|t| *t == rec.task_id)
            .expect("task registered");
        let a = &mut acc[t];
        a.0 += 1;
        a.1 += o.score();
        a.2 += o.cost();
        a.3 += compute_reward(pref, o, &spec)?;
    }
    Ok(ds
        .tasks()
        .iter()
        .zip(acc)
        .filter(|(_, a)| a.0 > 0)
        .map(|(task, (n, s, c, r))| TaskRow {
            task: task.clone(),
            n,
            score_pct: 100.0 * s / n as f64,
            cost_usd: c / n as f64,
            mean_reward: r / n as f64,
        })
        .collect())
}

/// Evaluates a router's argmax choices at a fixed preference.
pub fn evaluate(
    router: &dyn Router,
    env: &BanditEnvironment,
    split: Split,
    pref: PreferenceVector,
) -> Result<EvaluationReport> {
    check_shape(router, env)?;
    let tasks = task_rows(env, split, &pref, |_, e, _| router.route(e, &pref))?;
    Ok(EvaluationReport::from_tasks(
        ReportMeta {
            router: router.name(),
            split: Some(split),
            preference: Some(pref),
            tau: Some(crate::environment::BanditFeedback::reward_spec(env).tau()),
            ..Default::default()
        },
        tasks,
    ))
}

/// Evaluates the per-record best arm (full-information upper bound).
pub fn evaluate_oracle(env: &BanditEnvironment, split: Split, pref: PreferenceVector) -> Result<EvaluationReport> {
    let spec = crate::environment::BanditFeedback::reward_spec(env);
    let tasks = task_rows(env, split, &pref, |_, _, row| oracle_arm(row, &pref, &spec))?;
    Ok(EvaluationReport::from_tasks(
        ReportMeta {
            router: "oracle".into(),
            split: Some(split),
            preference: Some(pref),
            tau: Some(spec.tau()),
            ..Default::default()
        },
        tasks,
    ))
}

fn sweep_with<F>(grid: &[f64], mut eval: F) -> Result<Vec<SweepPoint>>
where
    F: FnMut(PreferenceVector) -> Result<EvaluationReport>,
{
    let mut grid = grid.to_vec();
    if let Some(bad) = grid.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(EvalError::InvalidGrid(*bad));
    }
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.iter()
        .map(|&w_c| {
            let r = eval(PreferenceVector::from_cost_weight(w_c)?)?;
            Ok(SweepPoint {
                w_c,
                score_pct: r.avg_score_pct,
                cost_usd: r.avg_cost_usd,
                mean_reward: r.mean_reward,
                tasks: r.tasks,
            })
        })
        .collect()
}

/// Evaluates at `w = (1 - w_c, w_c)` for each grid point; sorted by `w_c`.
pub fn sweep_preferences(
    router: &dyn Router,
    env: &BanditEnvironment,
    split: Split,
    grid: &[f64],
) -> Result<Vec<SweepPoint>> {
    check_shape(router, env)?;
    sweep_with(grid, |w| evaluate(router, env, split, w))
}

pub fn sweep_oracle(env: &BanditEnvironment, split: Split, grid: &[f64]) -> Result<Vec<SweepPoint>> {
    sweep_with(grid, |w| evaluate_oracle(env, split, w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub score_improvement_pct: f64,
    pub cost_reduction_pct: f64,
}

impl Comparison {
    pub fn render(&self) -> String {
        format!(
            "score improvement: {}%  cost reduction: {}%",
            fmt_pct(self.score_improvement_pct),
            fmt_pct(self.cost_reduction_pct)
        )
    }
}

/// Relative score improvement and cost reduction of `candidate` over `reference`.
pub fn compare(reference: &EvaluationReport, candidate: &EvaluationReport) -> Result<Comparison> {
    fn tasks(r: &EvaluationReport) -> Vec<&str> {
        let mut t: Vec<&str> = r.tasks.iter().map(|t| t.task.as_str()).collect();
        t.sort_unstable();
        t
    }
    if tasks(reference) != tasks(candidate) {
        return Err(EvalError::Incomparable("reports cover different tasks".into()));
    }
    if reference.avg_score_pct == 0.0 {
        return Err(EvalError::Incomparable("reference score is zero".into()));
    }
    if reference.avg_cost_usd == 0.0 {
        return Err(EvalError::Incomparable("reference cost is zero".into()));
    }
    Ok(Comparison {
        score_improvement_pct: (candidate.avg_score_pct - reference.avg_score_pct) / reference.avg_score_pct * 100.0,
        cost_reduction_pct: (reference.avg_cost_usd - candidate.avg_cost_usd) / reference.avg_cost_usd * 100.0,
    })
}

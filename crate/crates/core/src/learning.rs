//! REINFORCE with a batch-mean baseline and entropy regularization.
//!
//! Each training record is paired with a fresh preference drawn from the
//! simplex, an arm is sampled from the current policy, and only that arm's
//! outcome is requested from the environment. One Adam step is taken per
//! mini-batch on the mean per-sample gradient of
//! `-(r - b) log π(a) - β H(π)`, where `b` is the batch-mean reward.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{compute_reward, Context, DomainError, PreferenceVector, RewardSpec};
use crate::environment::{AccessToken, BanditEnvironment, BanditFeedback, EnvError, Split};
use crate::numerics::{sample_simplex_preference, AdamConfig, AdamState, NumericsError, SeededRng};
use crate::policy::{
    entropy, sample_loss, select_sample, HeadKind, PolicyDims, PolicyError, PolicyNetwork, PolicyOutput,
};

#[derive(Debug, Error)]
pub enum LearningError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("baseline of an empty batch")]
    EmptyBatch,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("environment has no training records")]
    NoTrainingData,
    #[error("environment shape (d_e={env_d_e}, k={env_k}) does not match policy (d_e={net_d_e}, k={net_k})")]
    ShapeMismatch {
        env_d_e: usize,
        env_k: usize,
        net_d_e: usize,
        net_k: usize,
    },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (loss={loss}, mean reward={reward})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
        reward: f64,
    },
}

pub type Result<T> = std::result::Result<T, LearningError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Entropy regularization coefficient.
    pub beta: f64,
    pub seed: u64,
    pub head_kind: HeadKind,
    /// Cost cap; `None` uses the dataset default.
    pub tau: Option<f64>,
    pub d_p: usize,
    pub pref_hidden: usize,
    pub head_hidden: usize,
    pub bilinear_rank: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr: 1e-4,
            beta: 0.05,
            seed: 0,
            head_kind: HeadKind::Mlp,
            tau: None,
            d_p: 64,
            pref_hidden: 64,
            head_hidden: 256,
            bilinear_rank: 8,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LearningError::InvalidConfig(m.to_string()));
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if let Some(t) = self.tau {
            if !(t.is_finite() && t > 0.0) {
                return bad("tau must be positive");
            }
        }
        Ok(())
    }

    pub fn policy_dims(&self, d_e: usize, k: usize) -> PolicyDims {
        PolicyDims {
            d_e,
            d_p: self.d_p,
            pref_hidden: self.pref_hidden,
            head_hidden: self.head_hidden,
            rank: self.bilinear_rank,
            k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub batches: usize,
    pub mean_reward: f64,
    pub mean_entropy: f64,
    pub mean_loss: f64,
}

/// Per-epoch statistics and per-batch baselines of a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochStats>,
    pub baselines: Vec<Vec<f64>>,
    /// Wall-clock seconds per epoch. Not part of the reproducible trace file.
    #[serde(skip)]
    pub wall_clock_secs: Vec<f64>,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    #[serde(flatten)]
    stats: &'a EpochStats,
    baselines: &'a [f64],
}

impl TrainingTrace {
    pub fn extend(&mut self, other: TrainingTrace) {
        self.epochs.extend(other.epochs);
        self.baselines.extend(other.baselines);
        self.wall_clock_secs.extend(other.wall_clock_secs);
    }

    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (stats, baselines) in self.epochs.iter().zip(&self.baselines) {
            out.push_str(&serde_json::to_string(&TraceLine { stats, baselines }).expect("trace serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())
    }
}

/// Mean reward of the batch, current sample included.
pub fn batch_baseline(rewards: &[f64]) -> Result<f64> {
    if rewards.is_empty() {
        return Err(LearningError::EmptyBatch);
    }
    Ok(rewards.iter().sum::<f64>() / rewards.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    BatchMean,
    Zero,
}

/// One interaction: the forward pass, the sampled arm and the observed reward.
#[derive(Debug, Clone)]
pub struct Interaction {
    pub output: PolicyOutput,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub gradient: Vec<f64>,
    pub baseline: f64,
    pub mean_loss: f64,
    pub mean_entropy: f64,
    pub mean_reward: f64,
}

/// Mean per-sample gradient of the entropy-regularized REINFORCE loss.
pub fn batch_gradient(
    net: &PolicyNetwork,
    batch: &[Interaction],
    beta: f64,
    mode: BaselineMode,
) -> Result<BatchGradient> {
    let rewards: Vec<f64> = batch.iter().map(|s| s.reward).collect();
    let mean_reward = batch_baseline(&rewards)?;
    let baseline = match mode {
        BaselineMode::BatchMean => mean_reward,
        BaselineMode::Zero => 0.0,
    };
    let n = batch.len() as f64;
    let mut gradient = vec![0.0; net.params().len()];
    let mut loss = 0.0;
    let mut ent = 0.0;
    for s in batch {
        let adv = s.reward - baseline;
        net.accumulate_backward(&s.output, s.action, adv, beta, &mut gradient)?;
        loss += sample_loss(&s.output, s.action, adv, beta)?;
        ent += entropy(&s.output);
    }
    gradient.iter_mut().for_each(|g| *g /= n);
    Ok(BatchGradient {
        gradient,
        baseline,
        mean_loss: loss / n,
        mean_entropy: ent / n,
        mean_reward,
    })
}

/// Samples preference and arm for one record and observes its reward.
pub fn interact<F: BanditFeedback + ?Sized>(
    net: &PolicyNetwork,
    env: &F,
    record: usize,
    reward: &RewardSpec,
    rng: &mut SeededRng,
) -> Result<Interaction> {
    let pref = sample_simplex_preference(rng);
    let output = net.forward(&Context::new(env.embedding(record)?, pref)?)?;
    let action = select_sample(&output, rng);
    let outcome = env.step(record, action)?;
    let reward = compute_reward(&pref, &outcome, reward)?;
    Ok(Interaction { output, action, reward })
}

/// Owns the policy, optimizer and random stream of a training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainingConfig,
    net: PolicyNetwork,
    adam: AdamState,
    rng: SeededRng,
    token: AccessToken,
    epochs_done: usize,
}

impl Trainer {
    pub fn new(cfg: TrainingConfig, d_e: usize, k: usize) -> Result<Self> {
        cfg.validate()?;
        let net = PolicyNetwork::new(cfg.head_kind, cfg.policy_dims(d_e, k), cfg.seed)?;
        Self::with_network(cfg, net)
    }

    pub fn with_network(cfg: TrainingConfig, net: PolicyNetwork) -> Result<Self> {
        cfg.validate()?;
        let adam = AdamState::new(net.params().len(), AdamConfig::with_lr(cfg.lr));
        let rng = SeededRng::new(cfg.seed ^ 0x005E_ED0F_7EA1);
        Ok(Self {
            cfg,
            net,
            adam,
            rng,
            token: AccessToken::training(),
            epochs_done: 0,
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.cfg
    }

    pub fn network(&self) -> &PolicyNetwork {
        &self.net
    }

    pub fn into_network(self) -> PolicyNetwork {
        self.net
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// The capability this trainer holds. It never grants full outcome rows.
    pub fn access_token(&self) -> &AccessToken {
        &self.token
    }

    fn resolve_reward<F: BanditFeedback + ?Sized>(&self, env: &F) -> Result<RewardSpec> {
        match self.cfg.tau {
            Some(t) => Ok(RewardSpec::new(t)?),
            None => Ok(env.reward_spec()),
        }
    }

    fn check_shape<F: BanditFeedback + ?Sized>(&self, env: &F) -> Result<()> {
        let d = self.net.dims();
        if env.embedding_dim() != d.d_e || env.num_arms() != d.k {
            return Err(LearningError::ShapeMismatch {
                env_d_e: env.embedding_dim(),
                env_k: env.num_arms(),
                net_d_e: d.d_e,
                net_k: d.k,
            });
        }
        Ok(())
    }

    /// One pass over the shuffled training records.
    pub fn train_epoch<F: BanditFeedback + ?Sized>(&mut self, env: &F) -> Result<TrainingTrace> {
        self.check_shape(env)?;
        let reward = self.resolve_reward(env)?;
        let mut order = env.train_indices();
        if order.is_empty() {
            return Err(LearningError::NoTrainingData);
        }
        let started = Instant::now();
        self.rng.shuffle(&mut order);
        let epoch = self.epochs_done;

        let mut baselines = Vec::new();
        let (mut sum_reward, mut sum_entropy, mut sum_loss, mut count) = (0.0, 0.0, 0.0, 0usize);
        for (bi, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let mut batch = Vec::with_capacity(chunk.len());
            for &record in chunk {
                batch.push(interact(&self.net, env, record, &reward, &mut self.rng)?);
            }
            let g = batch_gradient(&self.net, &batch, self.cfg.beta, BaselineMode::BatchMean)?;
            if !g.mean_loss.is_finite() || g.gradient.iter().any(|x| !x.is_finite()) {
                return Err(LearningError::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    loss: g.mean_loss,
                    reward: g.mean_reward,
                });
            }
            self.adam.step(self.net.params_mut(), &g.gradient)?;
            let n = batch.len();
            sum_reward += g.mean_reward * n as f64;
            sum_entropy += g.mean_entropy * n as f64;
            sum_loss += g.mean_loss * n as f64;
            count += n;
            baselines.push(g.baseline);
        }
        self.epochs_done += 1;
        let stats = EpochStats {
            epoch,
            batches: baselines.len(),
            mean_reward: sum_reward / count as f64,
            mean_entropy: sum_entropy / count as f64,
            mean_loss: sum_loss / count as f64,
        };
        Ok(TrainingTrace {
            epochs: vec![stats],
            baselines: vec![baselines],
            wall_clock_secs: vec![started.elapsed().as_secs_f64()],
        })
    }

    /// Runs the configured number of epochs.
    pub fn train<F: BanditFeedback + ?Sized>(&mut self, env: &F) -> Result<TrainingTrace> {
        self.train_with(env, |_, _| Ok(()))
    }

    /// Like [`Trainer::train`], calling `after_epoch` after each epoch.
    pub fn train_with<F, C>(&mut self, env: &F, mut after_epoch: C) -> Result<TrainingTrace>
    where
        F: BanditFeedback + ?Sized,
        C: FnMut(&Trainer, &EpochStats) -> Result<()>,
    {
        let mut trace = TrainingTrace::default();
        for _ in 0..self.cfg.epochs {
            let t = self.train_epoch(env)?;
            after_epoch(self, &t.epochs[0])?;
            log::info!(
                "epoch {}: reward {:.4} entropy {:.4} loss {:.5}",
                t.epochs[0].epoch,
                t.epochs[0].mean_reward,
                t.epochs[0].mean_entropy,
                t.epochs[0].mean_loss
            );
            trace.extend(t);
        }
        Ok(trace)
    }
}

/// Mean over the split of `Σ_a π(a|x,w) r(a)` at a fixed preference, using
/// the full outcome rows.
pub fn expected_reward(
    net: &PolicyNetwork,
    env: &BanditEnvironment,
    split: Split,
    pref: PreferenceVector,
) -> Result<f64> {
    let token = AccessToken::evaluation();
    let reward = env.reward_spec();
    let idx = env.dataset().indices(split);
    if idx.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in &idx {
        let out = net.forward(&Context::new(env.embedding(*i)?, pref)?)?;
        let row = env.full_outcomes(*i, &token)?;
        for (p, o) in out.probs().iter().zip(row) {
            total += p * compute_reward(&pref, o, &reward)?;
        }
    }
    Ok(total / idx.len() as f64)
}

//! Linear contextual-bandit baselines: LinUCB, linear Thompson sampling and
//! ε-greedy, all over the same disjoint per-arm ridge model.
//!
//! Features are `z = [e; w_q; w_c]`: the raw preference enters linearly.
//! Each arm keeps `A = λI + Σ z zᵀ`, `b = Σ r z` and `A⁻¹`, the latter
//! updated with Sherman–Morrison and recomputed from `A` every
//! `refactor_every` updates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{compute_reward, DomainError, PreferenceVector};
use crate::environment::{BanditFeedback, EnvError};
use crate::numerics::{dot, sample_simplex_preference, spd_inverse, Cholesky, Matrix, NumericsError, SeededRng};
use crate::policy::argmax;

#[derive(Debug, Error)]
pub enum BanditError {
    #[error("feature vector has {got} entries, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("arm {arm} out of range ({k} arms)")]
    ArmOutOfRange { arm: usize, k: usize },
    #[error("reward must be finite, got {0}")]
    NonFiniteReward(f64),
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

pub type Result<T> = std::result::Result<T, BanditError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    LinUcb,
    LinTs,
    EpsilonGreedy,
}

impl std::str::FromStr for AgentKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "linucb" | "lin-ucb" => Ok(AgentKind::LinUcb),
            "lints" | "lin-ts" | "thompson" => Ok(AgentKind::LinTs),
            "egreedy" | "epsilon-greedy" | "eps-greedy" => Ok(AgentKind::EpsilonGreedy),
            other => Err(format!("unknown agent `{other}` (linucb|lints|epsilon-greedy)")),
        }
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AgentKind::LinUcb => "lin-ucb",
            AgentKind::LinTs => "lin-ts",
            AgentKind::EpsilonGreedy => "epsilon-greedy",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub kind: AgentKind,
    /// Ridge regularization; `A` starts at `λI`.
    pub lambda: f64,
    /// LinUCB exploration width.
    pub alpha: f64,
    /// LinTS posterior scale (`θ ~ N(θ̂, ν² A⁻¹)`).
    pub nu: f64,
    /// ε-greedy exploration probability.
    pub epsilon: f64,
    pub refactor_every: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            kind: AgentKind::LinUcb,
            lambda: 1.0,
            alpha: 1.0,
            nu: 0.5,
            epsilon: 0.1,
            refactor_every: 1000,
        }
    }
}

impl AgentConfig {
    pub fn of_kind(kind: AgentKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(BanditError::InvalidConfig(m.into()));
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha must be non-negative");
        }
        if !(self.nu.is_finite() && self.nu >= 0.0) {
            return bad("nu must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must be in [0, 1]");
        }
        if self.refactor_every == 0 {
            return bad("refactor_every must be positive");
        }
        Ok(())
    }
}

/// Joint context for the linear agents: `[e; w_q; w_c]`.
pub fn agent_features(embedding: &[f64], pref: &PreferenceVector) -> Vec<f64> {
    let mut z = Vec::with_capacity(embedding.len() + 2);
    z.extend_from_slice(embedding);
    z.extend_from_slice(&pref.as_array());
    z
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    gram: Matrix,
    gram_inv: Matrix,
    response: Vec<f64>,
    pulls: u64,
    since_refactor: usize,
    #[serde(skip)]
    chol: Option<Cholesky>,
}

impl ArmModel {
    fn new(d: usize, lambda: f64) -> Self {
        Self {
            gram: Matrix::scaled_identity(d, lambda),
            gram_inv: Matrix::scaled_identity(d, 1.0 / lambda),
            response: vec![0.0; d],
            pulls: 0,
            since_refactor: 0,
            chol: None,
        }
    }

    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    pub fn gram_inv(&self) -> &Matrix {
        &self.gram_inv
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn pulls(&self) -> u64 {
        self.pulls
    }

    /// Ridge estimate `θ̂ = A⁻¹ b`.
    pub fn theta(&self) -> Vec<f64> {
        self.gram_inv.mat_vec(&self.response).expect("square")
    }
}

/// Per-arm ridge statistics plus the exploration rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearAgent {
    config: AgentConfig,
    dim: usize,
    arms: Vec<ArmModel>,
}

impl LinearAgent {
    pub fn new(config: AgentConfig, dim: usize, k: usize) -> Result<Self> {
        config.validate()?;
        if dim == 0 || k < 2 {
            return Err(BanditError::InvalidConfig("need dim >= 1 and k >= 2".into()));
        }
        let mut agent = Self {
            config,
            dim,
            arms: (0..k).map(|_| ArmModel::new(dim, config.lambda)).collect(),
        };
        agent.refresh_factors()?;
        Ok(agent)
    }

    /// Recomputes cached factorizations (needed after deserialization).
    pub fn refresh_factors(&mut self) -> Result<()> {
        if self.config.kind == AgentKind::LinTs {
            for arm in &mut self.arms {
                arm.chol = Some(Cholesky::factor(&arm.gram)?);
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn kind(&self) -> AgentKind {
        self.config.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn arm(&self, a: usize) -> &ArmModel {
        &self.arms[a]
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim {
            return Err(BanditError::Dimension {
                expected: self.dim,
                got: z.len(),
            });
        }
        Ok(())
    }

    /// `θ̂_aᵀz` for every arm.
    pub fn mean_scores(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        Ok(self.arms.iter().map(|a| dot(&a.theta(), z)).collect())
    }

    /// `θ̂_aᵀz + α sqrt(zᵀ A_a⁻¹ z)` for every arm.
    pub fn ucb_scores(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        self.arms
            .iter()
            .map(|a| {
                let width = a.gram_inv.quad_form(z)?.max(0.0).sqrt();
                Ok(dot(&a.theta(), z) + self.config.alpha * width)
            })
            .collect()
    }

    /// Posterior draw `θ̃ ~ N(θ̂, ν² A⁻¹)` scored against `z`, per arm.
    pub fn thompson_scores(&self, z: &[f64], rng: &mut SeededRng) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        self.arms
            .iter()
            .map(|a| {
                let owned;
                let chol = match &a.chol {
                    Some(c) => c,
                    None => {
                        owned = Cholesky::factor(&a.gram)?;
                        &owned
                    }
                };
                // With A = L Lᵀ, L⁻ᵀξ has covariance A⁻¹.
                let xi: Vec<f64> = (0..self.dim).map(|_| rng.standard_normal()).collect();
                let noise = chol.back_substitute(&xi);
                let theta = a.theta();
                Ok(theta
                    .iter()
                    .zip(&noise)
                    .zip(z)
                    .map(|((t, n), zi)| (t + self.config.nu * n) * zi)
                    .sum())
            })
            .collect()
    }

    /// Exploring arm choice used during training.
    pub fn select(&self, z: &[f64], rng: &mut SeededRng) -> Result<usize> {
        match self.config.kind {
            AgentKind::LinUcb => Ok(argmax(&self.ucb_scores(z)?)),
            AgentKind::LinTs => Ok(argmax(&self.thompson_scores(z, rng)?)),
            AgentKind::EpsilonGreedy => {
                self.check_dim(z)?;
                if rng.uniform() < self.config.epsilon {
                    Ok(rng.below(self.arms.len()))
                } else {
                    Ok(argmax(&self.mean_scores(z)?))
                }
            }
        }
    }

    /// Deterministic choice for inference: argmax of `θ̂_aᵀz`.
    pub fn greedy(&self, z: &[f64]) -> Result<usize> {
        Ok(argmax(&self.mean_scores(z)?))
    }

    /// Rank-one update of the chosen arm only.
    pub fn update(&mut self, z: &[f64], arm: usize, reward: f64) -> Result<()> {
        self.check_dim(z)?;
        let k = self.arms.len();
        if arm >= k {
            return Err(BanditError::ArmOutOfRange { arm, k });
        }
        if !reward.is_finite() {
            return Err(BanditError::NonFiniteReward(reward));
        }
        if z.iter().any(|x| !x.is_finite()) {
            return Err(BanditError::Numerics(NumericsError::NonFinite("features")));
        }
        let refactor_every = self.config.refactor_every;
        let kind = self.config.kind;
        let m = &mut self.arms[arm];
        m.gram.add_outer(z, 1.0)?;
        for (b, zi) in m.response.iter_mut().zip(z) {
            *b += reward * zi;
        }
        m.since_refactor += 1;
        if m.since_refactor >= refactor_every {
            m.gram_inv = spd_inverse(&m.gram)?;
            m.since_refactor = 0;
        } else {
            let az = m.gram_inv.mat_vec(z)?;
            let denom = 1.0 + dot(z, &az);
            m.gram_inv.add_outer(&az, -1.0 / denom)?;
        }
        if kind == AgentKind::LinTs {
            m.chol = Some(Cholesky::factor(&m.gram)?);
        }
        m.pulls += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentTrace {
    pub epoch_mean_reward: Vec<f64>,
}

/// Trains a linear agent under bandit feedback with simplex-sampled preferences.
pub fn train_agent<F: BanditFeedback + ?Sized>(
    agent: &mut LinearAgent,
    env: &F,
    epochs: usize,
    rng: &mut SeededRng,
) -> Result<AgentTrace> {
    let reward = env.reward_spec();
    let mut trace = AgentTrace::default();
    for _ in 0..epochs {
        let mut order = env.train_indices();
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for &i in &order {
            let pref = sample_simplex_preference(rng);
            let z = agent_features(env.embedding(i)?, &pref);
            let arm = agent.select(&z, rng)?;
            let outcome = env.step(i, arm)?;
            let r = compute_reward(&pref, &outcome, &reward)?;
            agent.update(&z, arm, r)?;
            total += r;
        }
        trace.epoch_mean_reward.push(if order.is_empty() {
            0.0
        } else {
            total / order.len() as f64
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_linucb_ties_to_arm_zero() {
        let agent = LinearAgent::new(AgentConfig::default(), 3, 4).unwrap();
        let z = [0.3, -1.0, 2.0];
        let scores = agent.ucb_scores(&z).unwrap();
        let want = crate::numerics::norm(&z);
        for s in &scores {
            assert!((s - want).abs() < 1e-12);
        }
        assert_eq!(agent.select(&z, &mut SeededRng::new(0)).unwrap(), 0);
    }

    #[test]
    fn one_dimensional_update_arithmetic() {
        let mut agent = LinearAgent::new(
            AgentConfig {
                alpha: 0.7,
                ..Default::default()
            },
            1,
            2,
        )
        .unwrap();
        agent.update(&[1.0], 0, 1.0).unwrap();
        assert_eq!(agent.arm(0).gram().get(0, 0), 2.0);
        assert_eq!(agent.arm(0).response(), &[1.0]);
        assert_eq!(agent.arm(0).theta(), vec![0.5]);
        let s = agent.ucb_scores(&[1.0]).unwrap()[0];
        assert!((s - (0.5 + 0.7 * 0.5f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn update_is_disjoint_and_additive() {
        let mut agent = LinearAgent::new(AgentConfig::default(), 2, 2).unwrap();
        let before = agent.arm(1).clone();
        let z = [0.5, -2.0];
        agent.update(&z, 0, 0.3).unwrap();
        agent.update(&z, 0, 0.3).unwrap();
        assert_eq!(agent.arm(1), &before);
        let g = agent.arm(0).gram();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 } + 2.0 * z[i] * z[j];
                assert!((g.get(i, j) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn greedy_with_zero_epsilon() {
        let cfg = AgentConfig {
            epsilon: 0.0,
            ..AgentConfig::of_kind(AgentKind::EpsilonGreedy)
        };
        let mut agent = LinearAgent::new(cfg, 2, 3).unwrap();
        // Teach arm 2 a large positive weight on the first feature.
        for _ in 0..20 {
            agent.update(&[1.0, 0.0], 2, 1.0).unwrap();
        }
        let mut rng = SeededRng::new(1);
        for _ in 0..100 {
            assert_eq!(agent.select(&[1.0, 0.0], &mut rng).unwrap(), 2);
        }
    }

    #[test]
    fn lints_with_zero_variance_is_greedy() {
        let mut ts = LinearAgent::new(
            AgentConfig {
                nu: 0.0,
                ..AgentConfig::of_kind(AgentKind::LinTs)
            },
            3,
            3,
        )
        .unwrap();
        let mut eg = LinearAgent::new(
            AgentConfig {
                epsilon: 0.0,
                ..AgentConfig::of_kind(AgentKind::EpsilonGreedy)
            },
            3,
            3,
        )
        .unwrap();
        let mut rng = SeededRng::new(2);
        for t in 0..60 {
            let z = [rng.standard_normal(), rng.standard_normal(), 1.0];
            let a = t % 3;
            let r = 0.3 * z[0] - 0.1 * a as f64;
            ts.update(&z, a, r).unwrap();
            eg.update(&z, a, r).unwrap();
        }
        let mut r1 = SeededRng::new(3);
        let mut r2 = SeededRng::new(4);
        for _ in 0..200 {
            let z = [rng.standard_normal(), rng.standard_normal(), 1.0];
            assert_eq!(ts.select(&z, &mut r1).unwrap(), eg.select(&z, &mut r2).unwrap());
        }
    }

    #[test]
    fn refactorization_keeps_inverse_accurate() {
        let cfg = AgentConfig {
            refactor_every: 7,
            ..Default::default()
        };
        let mut agent = LinearAgent::new(cfg, 4, 2).unwrap();
        let mut rng = SeededRng::new(9);
        for _ in 0..50 {
            let z: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
            agent.update(&z, 0, rng.uniform()).unwrap();
        }
        let prod = agent.arm(0).gram().mat_mul(agent.arm(0).gram_inv()).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod.get(i, j) - want).abs() < 1e-10);
            }
        }
        assert_eq!(agent.arm(0).pulls(), 50);
    }

    #[test]
    fn errors() {
        let mut agent = LinearAgent::new(AgentConfig::default(), 2, 2).unwrap();
        assert!(matches!(
            agent.update(&[1.0], 0, 0.0),
            Err(BanditError::Dimension { .. })
        ));
        assert!(matches!(
            agent.update(&[1.0, 0.0], 5, 0.0),
            Err(BanditError::ArmOutOfRange { .. })
        ));
        assert!(matches!(
            agent.update(&[1.0, 0.0], 0, f64::NAN),
            Err(BanditError::NonFiniteReward(_))
        ));
        assert!(agent.select(&[1.0, 2.0, 3.0], &mut SeededRng::new(0)).is_err());
        assert!(LinearAgent::new(
            AgentConfig {
                lambda: 0.0,
                ..Default::default()
            },
            2,
            2
        )
        .is_err());
    }

    #[test]
    fn serde_round_trip_restores_factors() {
        let mut agent = LinearAgent::new(AgentConfig::of_kind(AgentKind::LinTs), 2, 2).unwrap();
        agent.update(&[0.4, 1.0], 1, 0.8).unwrap();
        let json = serde_json::to_string(&agent).unwrap();
        let mut back: LinearAgent = serde_json::from_str(&json).unwrap();
        back.refresh_factors().unwrap();
        assert_eq!(back, agent);
    }
}

//! Problem-setting types: preferences, arms, outcomes and the scalarized reward.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("preference weights must be non-negative and sum to 1, got ({quality}, {cost})")]
    InvalidPreference { quality: f64, cost: f64 },
    #[error("an arm set needs at least 2 arms, got {0}")]
    TooFewArms(usize),
    #[error("duplicate arm id `{0}`")]
    DuplicateArm(String),
    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("cost must be finite and non-negative, got {0}")]
    InvalidCost(f64),
    #[error("cost cap tau must be finite and positive, got {0}")]
    InvalidTau(f64),
    #[error("embedding has {got} entries, expected {expected}")]
    EmbeddingDimension { expected: usize, got: usize },
    #[error("embedding contains a non-finite entry")]
    NonFiniteEmbedding,
}

pub type Result<T> = std::result::Result<T, DomainError>;

const SIMPLEX_TOL: f64 = 1e-12;

/// User trade-off `(w_q, w_c)` between quality and cost on the 1-simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPreference", into = "RawPreference")]
pub struct PreferenceVector {
    quality: f64,
    cost: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPreference {
    w_q: f64,
    w_c: f64,
}

impl TryFrom<RawPreference> for PreferenceVector {
    type Error = DomainError;
    fn try_from(raw: RawPreference) -> Result<Self> {
        Self::new(raw.w_q, raw.w_c)
    }
}

impl From<PreferenceVector> for RawPreference {
    fn from(p: PreferenceVector) -> Self {
        RawPreference {
            w_q: p.quality,
            w_c: p.cost,
        }
    }
}

impl PreferenceVector {
    pub fn new(quality: f64, cost: f64) -> Result<Self> {
        let ok = quality.is_finite()
            && cost.is_finite()
            && quality >= 0.0
            && cost >= 0.0
            && (quality + cost - 1.0).abs() <= SIMPLEX_TOL;
        if !ok {
            return Err(DomainError::InvalidPreference { quality, cost });
        }
        Ok(Self { quality, cost })
    }

    /// `(w_q, 1 - w_q)`.
    pub fn from_quality_weight(quality: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&quality) {
            return Err(DomainError::InvalidPreference {
                quality,
                cost: 1.0 - quality,
            });
        }
        Ok(Self {
            quality,
            cost: 1.0 - quality,
        })
    }

    /// `(1 - w_c, w_c)`.
    pub fn from_cost_weight(cost: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&cost) {
            return Err(DomainError::InvalidPreference {
                quality: 1.0 - cost,
                cost,
            });
        }
        Ok(Self {
            quality: 1.0 - cost,
            cost,
        })
    }

    pub fn balanced() -> Self {
        Self {
            quality: 0.5,
            cost: 0.5,
        }
    }

    pub fn quality(&self) -> f64 {
        self.quality
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.quality, self.cost]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmDescriptor {
    pub id: String,
    #[serde(default)]
    pub name: String,
}

/// Ordered candidate arms; the position of an arm is its action id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ArmDescriptor>", into = "Vec<ArmDescriptor>")]
pub struct ArmSet {
    arms: Vec<ArmDescriptor>,
}

impl TryFrom<Vec<ArmDescriptor>> for ArmSet {
    type Error = DomainError;
    fn try_from(arms: Vec<ArmDescriptor>) -> Result<Self> {
        ArmSet::new(arms)
    }
}

impl From<ArmSet> for Vec<ArmDescriptor> {
    fn from(set: ArmSet) -> Self {
        set.arms
    }
}

impl ArmSet {
    pub fn new(arms: Vec<ArmDescriptor>) -> Result<Self> {
        if arms.len() < 2 {
            return Err(DomainError::TooFewArms(arms.len()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &arms {
            if !seen.insert(a.id.as_str()) {
                return Err(DomainError::DuplicateArm(a.id.clone()));
            }
        }
        Ok(Self { arms })
    }

    /// Arms named by id only.
    pub fn from_ids<S: AsRef<str>>(ids: &[S]) -> Result<Self> {
        Self::new(
            ids.iter()
                .map(|id| ArmDescriptor {
                    id: id.as_ref().to_string(),
                    name: id.as_ref().to_string(),
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn arms(&self) -> &[ArmDescriptor] {
        &self.arms
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.arms.iter().position(|a| a.id == id)
    }
}

/// Observed result of querying one arm: score in `[0, 1]` and cost in USD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    score: f64,
    cost: f64,
}

impl Outcome {
    pub fn new(score: f64, cost: f64) -> Result<Self> {
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            return Err(DomainError::ScoreOutOfRange(score));
        }
        if !cost.is_finite() || cost < 0.0 {
            return Err(DomainError::InvalidCost(cost));
        }
        Ok(Self { score, cost })
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    tau: f64,
}

impl RewardSpec {
    pub fn new(tau: f64) -> Result<Self> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(DomainError::InvalidTau(tau));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// `min(c / tau, 1)`.
pub fn normalize_cost(cost: f64, spec: &RewardSpec) -> Result<f64> {
    if !cost.is_finite() || cost < 0.0 {
        return Err(DomainError::InvalidCost(cost));
    }
    Ok((cost / spec.tau).min(1.0))
}

/// `w_q * q - w_c * min(c / tau, 1)`, always within `[-1, 1]`.
pub fn compute_reward(pref: &PreferenceVector, outcome: &Outcome, spec: &RewardSpec) -> Result<f64> {
    let c = normalize_cost(outcome.cost, spec)?;
    Ok(pref.quality * outcome.score - pref.cost * c)
}

/// What the router sees before acting: the prompt embedding and the preference.
#[derive(Debug, Clone, PartialEq)]
pub struct Context<'a> {
    pub embedding: &'a [f64],
    pub preference: PreferenceVector,
}

impl<'a> Context<'a> {
    pub fn new(embedding: &'a [f64], preference: PreferenceVector) -> Result<Self> {
        if embedding.iter().any(|x| !x.is_finite()) {
            return Err(DomainError::NonFiniteEmbedding);
        }
        Ok(Self { embedding, preference })
    }

    pub fn check_dim(&self, d_e: usize) -> Result<()> {
        if self.embedding.len() != d_e {
            return Err(DomainError::EmbeddingDimension {
                expected: d_e,
                got: self.embedding.len(),
            });
        }
        Ok(())
    }
}

//! Self-describing JSON checkpoints for policies and linear agents.
//!
//! ```text
//! {"format": "prefroute-checkpoint", "version": 1, "seed": 7, "step": 2500,
//!  "kind": "policy", "head_kind": "mlp", "dims": {...}, "params": [...]}
//! {"format": "prefroute-checkpoint", "version": 1, "seed": 7, "step": 8000,
//!  "kind": "agent", "agent": {"config": {"kind": "lin-ucb", ...}, ...}}
//! ```
//!
//! Floats are written with shortest round-trip formatting, so loading a
//! checkpoint reproduces the parameters bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandits::{BanditError, LinearAgent};
use crate::policy::{HeadKind, PolicyDims, PolicyError, PolicyNetwork};

pub const CHECKPOINT_FORMAT: &str = "prefroute-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} file (format `{format}`, version {version})")]
    Format { format: String, version: u32 },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Agent(#[from] BanditError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CheckpointBody {
    Policy {
        head_kind: HeadKind,
        dims: PolicyDims,
        params: Vec<f64>,
    },
    Agent {
        agent: LinearAgent,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    /// Optimizer or update steps taken so far.
    pub step: u64,
    #[serde(flatten)]
    pub body: CheckpointBody,
}

/// Restored model.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Policy(PolicyNetwork),
    Agent(LinearAgent),
}

impl Model {
    /// Prompt embedding width the model expects.
    pub fn embedding_dim(&self) -> usize {
        match self {
            Model::Policy(n) => n.dims().d_e,
            Model::Agent(a) => a.dim() - 2,
        }
    }

    pub fn num_arms(&self) -> usize {
        match self {
            Model::Policy(n) => n.dims().k,
            Model::Agent(a) => a.num_arms(),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Model::Policy(n) => format!("reinforce-{}", n.kind()),
            Model::Agent(a) => a.kind().to_string(),
        }
    }
}

impl Checkpoint {
    pub fn from_policy(net: &PolicyNetwork, seed: u64, step: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed,
            step,
            body: CheckpointBody::Policy {
                head_kind: net.kind(),
                dims: *net.dims(),
                params: net.params().to_vec(),
            },
        }
    }

    pub fn from_agent(agent: &LinearAgent, seed: u64, step: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed,
            step,
            body: CheckpointBody::Agent { agent: agent.clone() },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CheckpointError> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Format {
                format: c.format,
                version: c.version,
            });
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let s = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&s)
    }

    pub fn into_model(self) -> Result<Model, CheckpointError> {
        match self.body {
            CheckpointBody::Policy {
                head_kind,
                dims,
                params,
            } => Ok(Model::Policy(PolicyNetwork::from_params(head_kind, dims, params)?)),
            CheckpointBody::Agent { mut agent } => {
                agent.refresh_factors()?;
                Ok(Model::Agent(agent))
            }
        }
    }
}

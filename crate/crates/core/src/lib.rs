//! Preference-conditioned LLM routing as a contextual bandit.
//!
//! A router sees a prompt embedding `e` and a user preference `w = (w_q, w_c)`
//! on the 1-simplex, picks one of `K` models, and is paid
//! `w_q q - w_c min(c / tau, 1)` for the chosen model's logged quality `q`
//! and cost `c`. Only the chosen cell of the log is revealed during training.
//!
//! - [`domain`]: preferences, outcomes and the reward.
//! - [`environment`]: logged datasets, ingestion, synthetic generators and
//!   the [`BanditFeedback`] boundary the learners train through.
//! - [`policy`]: the softmax policy with linear, bilinear and MLP heads.
//! - [`learning`]: REINFORCE with a batch-mean baseline and entropy bonus.
//! - [`bandits`]: LinUCB, linear Thompson sampling and ε-greedy baselines.
//! - [`evaluation`]: per-task reports, preference sweeps and comparisons.
//! - [`checkpoint`]: versioned JSON checkpoints for every model kind.
//! - [`cli`]: the `prefroute` command line.
//!
//! Runnable examples live in `examples/`:
//!
//! | example | shows |
//! |---|---|
//! | `reward_and_preferences` | how the reward ranks two models across `w_c` |
//! | `train_reinforce` | training and per-preference routing on the piecewise task |
//! | `preference_sweep` | the score/cost curve over a `w_c` grid, as CSV |
//! | `linear_bandits` | the three linear baselines on the same log |
//! | `head_ablation` | head capacity on the xor task |
//! | `ingest_logs` | JSONL plus sidecar ingestion and the access boundary |
//! | `table_arithmetic` | report aggregation and router comparison |

pub mod bandits;
pub mod checkpoint;
pub mod cli;
pub mod domain;
pub mod environment;
pub mod evaluation;
pub mod learning;
pub mod numerics;
pub mod policy;

pub use bandits::{AgentConfig, AgentKind, LinearAgent};
pub use checkpoint::{Checkpoint, Model};
pub use domain::{compute_reward, Outcome, PreferenceVector, RewardSpec};
pub use environment::{BanditEnvironment, BanditFeedback, LoggedDataset, Split};
pub use evaluation::{EvaluationReport, Router};
pub use learning::{Trainer, TrainingConfig};
pub use policy::{HeadKind, PolicyNetwork};

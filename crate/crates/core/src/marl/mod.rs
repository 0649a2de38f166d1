//! Multi-agent actor-critic training and the policies it is compared against.

pub mod agent;
pub mod checkpoint;
pub mod nn;
pub mod policy;
pub mod replay;
pub mod train;

use thiserror::Error;

use crate::env::EnvError;

pub use agent::{AgentLearner, TrainConfig};
pub use checkpoint::{load_policy, save_policy};
pub use policy::{AllCloud, AllLocal, GreedyPolicy, LearnedPolicy, Policy, PolicySource, RandomPolicy};
pub use replay::ReplayBuffer;
pub use train::{evaluate, evaluate_policy, run_episode, train, EpisodeStats, Evaluation, TrainOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("insufficient experience: have {have} transitions, need {need}")]
    InsufficientExperience { have: usize, need: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite loss at update {step}")]
    NonFiniteLoss { step: u64 },
    #[error("network parameters became non-finite")]
    NonFiniteParameters,
    #[error("invalid training configuration: {0:?}")]
    InvalidConfig(Vec<String>),
    #[error("unknown policy '{0}'")]
    UnknownPolicy(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

//! The generative actor-critic learner.

mod agent;
mod replay;
mod train;

pub use agent::{GacAgent, GacConfig, StepLosses};
pub use replay::{Batch, ReplayBuffer};
pub use train::{evaluate_policy, MetricsRow, TrainOptions, Trainer};

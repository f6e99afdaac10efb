//! Constrained reinforcement learning: invalid-action masking, a discrete
//! soft actor-critic with twin critics, Lagrange multiplier dynamics,
//! invariant reward shaping and the training/evaluation loops.

pub mod artifact;
pub mod eval;
pub mod lagrange;
pub mod mask;
pub mod replay;
pub mod sac;
pub mod trainer;

pub use artifact::PolicyArtifact;
pub use eval::{evaluate, evaluate_policy, EvalSummary, NnPolicy};
pub use lagrange::{update_lambda, LagrangeState};
pub use mask::{mask_logits, sample_masked, MASK_LOGIT};
pub use replay::{ReplayBuffer, Transition};
pub use sac::{SacAgent, SacConfig};
pub use trainer::{shape_reward, train, AgentVariant, LambdaMode, TrainLogRecord, TrainOutcome, TrainerConfig};

//! Dynamic material handling with multiple AGVs: a discrete-event
//! simulator with a gym-style interface, classic dispatching-rule baselines
//! and a constrained reinforcement-learning trainer (Lagrangian-relaxed
//! soft actor-critic with invalid-action masking).

pub mod crl;
pub mod engine;
pub mod instance;
pub mod layout;
pub mod neural;
pub mod parallel;
pub mod policy;
pub mod rules;

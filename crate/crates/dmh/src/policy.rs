//! Decision policies over the engine's (rule, vehicle) action space, plus
//! the rollout driver producing per-episode metrics.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{Action, Engine, EngineConfig, EngineError, Observation, Status};
use crate::instance::Instance;
use crate::layout::Layout;
use crate::rules::Rule;

/// Splitmix64-style seed derivation so that trial seeds are independent of
/// iteration order and stable across runs.
pub fn derive_seed(base: u64, salt: &str) -> u64 {
    let mut h = base ^ 0x9e37_79b9_7f4a_7c15;
    for byte in salt.bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 27;
    }
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

pub trait Policy {
    fn name(&self) -> String;

    /// Chooses one of `observation.valid_actions`. The observation is never
    /// terminal and the valid set never empty when this is called.
    fn decide(&mut self, observation: &Observation, rng: &mut dyn RngCore) -> Action;
}

/// Fixed dispatching rule on a uniformly random idle vehicle, matching the
/// shuffled multi-vehicle adaptation of the classic baselines.
pub struct RulePolicy {
    pub rule: Rule,
}

impl Policy for RulePolicy {
    fn name(&self) -> String {
        self.rule.name().to_string()
    }

    fn decide(&mut self, observation: &Observation, rng: &mut dyn RngCore) -> Action {
        let idle: Vec<usize> = observation
            .valid_actions
            .iter()
            .filter(|a| a.rule == self.rule)
            .map(|a| a.vehicle)
            .collect();
        Action {
            rule: self.rule,
            vehicle: idle[rng.gen_range(0..idle.len())],
        }
    }
}

/// Uniform over the epoch's valid actions.
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn name(&self) -> String {
        "random".to_string()
    }

    fn decide(&mut self, observation: &Observation, rng: &mut dyn RngCore) -> Action {
        observation.valid_actions[rng.gen_range(0..observation.valid_actions.len())]
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeMetrics {
    pub makespan: f64,
    pub tardiness: f64,
    pub per_task_delay: Vec<f64>,
    pub constraint_satisfied: bool,
    pub decisions: usize,
    pub wall_time_per_decision: Duration,
}

/// Runs one full episode and reports both objectives. `epsilon` is the
/// tardiness threshold used for the constraint-satisfaction flag.
pub fn rollout(
    policy: &mut dyn Policy,
    instance: &Instance,
    layout: &Arc<Layout>,
    config: &EngineConfig,
    epsilon: f64,
    seed: u64,
) -> Result<EpisodeMetrics, EngineError> {
    let mut engine = Engine::new(Arc::clone(layout), config.clone());
    rollout_with_engine(&mut engine, policy, instance, epsilon, seed)
}

pub fn rollout_with_engine(
    engine: &mut Engine,
    policy: &mut dyn Policy,
    instance: &Instance,
    epsilon: f64,
    seed: u64,
) -> Result<EpisodeMetrics, EngineError> {
    let mut obs = engine.reset(instance, derive_seed(seed, "engine"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "policy"));
    let mut decision_time = Duration::ZERO;
    while !obs.terminal {
        let started = Instant::now();
        let action = policy.decide(&obs, &mut rng);
        decision_time += started.elapsed();
        obs = engine.step(action)?.observation;
    }
    Ok(episode_metrics(engine, epsilon, decision_time))
}

/// The random benchmark agent: at every decision epoch it assigns a uniformly
/// random staged task to a uniformly random idle vehicle, acting on the full
/// space of feasible (task, vehicle) assignments rather than through the
/// dispatching rules.
pub fn rollout_random_assignment(
    instance: &Instance,
    layout: &Arc<Layout>,
    config: &EngineConfig,
    epsilon: f64,
    seed: u64,
) -> Result<EpisodeMetrics, EngineError> {
    let mut engine = Engine::new(Arc::clone(layout), config.clone());
    let mut obs = engine.reset(instance, derive_seed(seed, "engine"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "policy"));
    let mut decision_time = Duration::ZERO;
    while !obs.terminal {
        let started = Instant::now();
        let staged = engine.staged_tasks();
        let idle: Vec<usize> = engine
            .vehicles()
            .iter()
            .enumerate()
            .filter(|(_, v)| v.status == Status::Idle)
            .map(|(i, _)| i)
            .collect();
        let task = staged[rng.gen_range(0..staged.len())].task_index;
        let vehicle = idle[rng.gen_range(0..idle.len())];
        decision_time += started.elapsed();
        obs = engine.step_with_task(task, vehicle)?.observation;
    }
    Ok(episode_metrics(&engine, epsilon, decision_time))
}

fn episode_metrics(engine: &Engine, epsilon: f64, decision_time: Duration) -> EpisodeMetrics {
    let decisions = engine.decisions();
    let tardiness = engine.tardiness();
    EpisodeMetrics {
        makespan: engine.makespan(),
        tardiness,
        per_task_delay: engine.per_task_delays(),
        constraint_satisfied: tardiness <= epsilon,
        decisions,
        wall_time_per_decision: if decisions > 0 {
            decision_time / decisions as u32
        } else {
            Duration::ZERO
        },
    }
}

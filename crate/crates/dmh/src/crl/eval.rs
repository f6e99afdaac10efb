//! Policy evaluation: a network-backed `Policy` adapter and the repeated
//! independent-trial protocol with aggregate statistics.

use std::sync::Arc;

use rand::RngCore;
use thiserror::Error;

use crate::crl::artifact::{feature_layout_hash, ArtifactError, PolicyArtifact};
use crate::crl::mask::sample_masked;
use crate::engine::{Action, EngineConfig, EngineError, Observation};
use crate::instance::Instance;
use crate::layout::Layout;
use crate::neural::Mlp;
use crate::parallel::map_indexed;
use crate::policy::{derive_seed, rollout, EpisodeMetrics, Policy};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("trials must be >= 1")]
    NoTrials,
}

/// Canonical descriptor of the observation layout; hashed into artifacts so
/// they cannot be replayed against an incompatible featurization.
pub fn feature_descriptor(k_max: usize, feature_scale: f64, vehicle_count: usize) -> String {
    format!("dmh-obs-v1|k_max={k_max}|scale={feature_scale}|vehicles={vehicle_count}")
}

pub fn runtime_feature_hash(config: &EngineConfig, vehicle_count: usize) -> u64 {
    feature_layout_hash(&feature_descriptor(
        config.k_max,
        config.feature_scale,
        vehicle_count,
    ))
}

/// Stochastic policy that samples from the masked softmax of network logits.
#[derive(Clone)]
pub struct NnPolicy {
    pub net: Mlp,
    pub vehicle_count: usize,
}

impl Policy for NnPolicy {
    fn name(&self) -> String {
        "nn".to_string()
    }

    fn decide(&mut self, observation: &Observation, rng: &mut dyn RngCore) -> Action {
        let logits = self
            .net
            .forward(ndarray::ArrayView1::from(&observation.features[..]))
            .expect("feature dimension mismatch");
        let mask = observation.action_mask(self.vehicle_count);
        let flat = sample_masked(logits.as_slice().unwrap(), &mask, rng)
            .expect("nonempty valid set");
        Action::from_flat_index(flat, self.vehicle_count).expect("index in range")
    }
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub trials: usize,
    pub mean_makespan: f64,
    pub std_makespan: f64,
    pub mean_tardiness: f64,
    pub std_tardiness: f64,
    /// Percentage of trials whose tardiness is at or below the threshold.
    pub satisfaction_pct: f64,
    pub mean_decision_ms: f64,
    pub per_trial: Vec<EpisodeMetrics>,
}

impl EvalSummary {
    pub fn from_trials(per_trial: Vec<EpisodeMetrics>) -> EvalSummary {
        let n = per_trial.len();
        let mean = |f: &dyn Fn(&EpisodeMetrics) -> f64| {
            per_trial.iter().map(|m| f(m)).sum::<f64>() / n as f64
        };
        let std = |f: &dyn Fn(&EpisodeMetrics) -> f64, mu: f64| {
            (per_trial.iter().map(|m| (f(m) - mu).powi(2)).sum::<f64>() / n as f64).sqrt()
        };
        let mean_makespan = mean(&|m| m.makespan);
        let mean_tardiness = mean(&|m| m.tardiness);
        let satisfied = per_trial.iter().filter(|m| m.constraint_satisfied).count();
        EvalSummary {
            trials: n,
            mean_makespan,
            std_makespan: std(&|m| m.makespan, mean_makespan),
            mean_tardiness,
            std_tardiness: std(&|m| m.tardiness, mean_tardiness),
            satisfaction_pct: 100.0 * satisfied as f64 / n as f64,
            mean_decision_ms: mean(&|m| m.wall_time_per_decision.as_secs_f64() * 1e3),
            per_trial,
        }
    }
}

/// Runs `trials` independent episodes of `policy` on one instance. Trial
/// seeds are derived from `seed` so results do not depend on scheduling.
pub fn evaluate_policy<P, F>(
    make_policy: F,
    instance: &Instance,
    layout: &Arc<Layout>,
    config: &EngineConfig,
    epsilon: f64,
    trials: usize,
    seed: u64,
    parallel: bool,
) -> Result<EvalSummary, EvalError>
where
    P: Policy,
    F: Fn() -> P + Sync,
{
    if trials == 0 {
        return Err(EvalError::NoTrials);
    }
    let results = map_indexed(trials, parallel, |t| {
        let mut policy = make_policy();
        let trial_seed = derive_seed(seed, &format!("trial{t}"));
        rollout(&mut policy, instance, layout, config, epsilon, trial_seed)
    });
    let mut per_trial = Vec::with_capacity(trials);
    for r in results {
        per_trial.push(r?);
    }
    Ok(EvalSummary::from_trials(per_trial))
}

/// Evaluates a saved policy artifact, checking its feature-layout hash
/// against the runtime configuration first.
pub fn evaluate(
    artifact: &PolicyArtifact,
    instance: &Instance,
    layout: &Arc<Layout>,
    config: &EngineConfig,
    epsilon: f64,
    trials: usize,
    seed: u64,
    parallel: bool,
) -> Result<EvalSummary, EvalError> {
    let vehicle_count = instance.vehicles.len();
    artifact.check_feature_hash(runtime_feature_hash(config, vehicle_count))?;
    evaluate_policy(
        || NnPolicy {
            net: artifact.policy.clone(),
            vehicle_count,
        },
        instance,
        layout,
        config,
        epsilon,
        trials,
        seed,
        parallel,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_instance, GeneratorParams};
    use crate::policy::RandomPolicy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Arc<Layout>, Instance) {
        let layout = Arc::new(Layout::bundled_default());
        let inst = generate_instance(
            &GeneratorParams {
                task_count: 8,
                ..Default::default()
            },
            &layout,
            "bundled-default",
            "eval-test",
            3,
        )
        .unwrap();
        (layout, inst)
    }

    fn random_artifact(state_dim: usize, action_dim: usize, hash: u64) -> PolicyArtifact {
        let dims = vec![state_dim, 16, action_dim];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        PolicyArtifact {
            dims: dims.clone(),
            feature_hash: hash,
            gamma: 0.97,
            alpha: 0.1,
            lambda: 0.001,
            seed: 5,
            policy: Mlp::init(&dims, &mut rng),
            q1: Mlp::init(&dims, &mut rng),
            q2: Mlp::init(&dims, &mut rng),
            target_q1: Mlp::init(&dims, &mut rng),
            target_q2: Mlp::init(&dims, &mut rng),
        }
    }

    #[test]
    fn evaluate_is_deterministic_and_parallel_agnostic() {
        let (layout, inst) = setup();
        let config = EngineConfig::default();
        let hash = runtime_feature_hash(&config, inst.vehicles.len());
        let state_dim = 1 + 3 * config.k_max + 4 * inst.vehicles.len();
        let action_dim = 4 * inst.vehicles.len();
        let art = random_artifact(state_dim, action_dim, hash);
        let a = evaluate(&art, &inst, &layout, &config, 50.0, 6, 9, false).unwrap();
        let b = evaluate(&art, &inst, &layout, &config, 50.0, 6, 9, true).unwrap();
        assert_eq!(a.mean_makespan, b.mean_makespan);
        assert_eq!(a.mean_tardiness, b.mean_tardiness);
        assert_eq!(a.satisfaction_pct, b.satisfaction_pct);
    }

    #[test]
    fn feature_hash_mismatch_is_an_error() {
        let (layout, inst) = setup();
        let config = EngineConfig::default();
        let state_dim = 1 + 3 * config.k_max + 4 * inst.vehicles.len();
        let art = random_artifact(state_dim, 4 * inst.vehicles.len(), 0xdead_beef);
        let err = evaluate(&art, &inst, &layout, &config, 50.0, 3, 9, false);
        assert!(matches!(
            err,
            Err(EvalError::Artifact(ArtifactError::FeatureHashMismatch { .. }))
        ));
    }

    #[test]
    fn zero_trials_rejected() {
        let (layout, inst) = setup();
        let config = EngineConfig::default();
        let err = evaluate_policy(
            || RandomPolicy,
            &inst,
            &layout,
            &config,
            50.0,
            0,
            1,
            false,
        );
        assert!(matches!(err, Err(EvalError::NoTrials)));
    }

    #[test]
    fn satisfaction_is_percentage() {
        let (layout, inst) = setup();
        let config = EngineConfig::default();
        // A huge threshold is always satisfied.
        let summary = evaluate_policy(
            || RandomPolicy,
            &inst,
            &layout,
            &config,
            1e12,
            5,
            2,
            false,
        )
        .unwrap();
        assert_eq!(summary.satisfaction_pct, 100.0);
        assert_eq!(summary.trials, 5);
        assert_eq!(summary.per_trial.len(), 5);
    }

    #[test]
    fn summary_statistics_match_hand_computation() {
        use std::time::Duration;
        let mk = |makespan: f64, tardiness: f64, sat: bool| EpisodeMetrics {
            makespan,
            tardiness,
            per_task_delay: vec![],
            constraint_satisfied: sat,
            decisions: 1,
            wall_time_per_decision: Duration::from_millis(2),
        };
        let s = EvalSummary::from_trials(vec![mk(10.0, 1.0, true), mk(14.0, 3.0, false)]);
        assert_eq!(s.mean_makespan, 12.0);
        assert_eq!(s.std_makespan, 2.0);
        assert_eq!(s.mean_tardiness, 2.0);
        assert_eq!(s.std_tardiness, 1.0);
        assert_eq!(s.satisfaction_pct, 50.0);
        assert!((s.mean_decision_ms - 2.0).abs() < 1e-9);
    }
}

//! Benchmark driver: repeated independent trials of each policy on each
//! instance with deterministic per-trial seeds, plus decision latency
//! measurement isolated from engine time.

use std::sync::Arc;

use dmh::crl::{NnPolicy, PolicyArtifact};
use dmh::engine::{EngineConfig, EngineError};
use dmh::instance::Instance;
use dmh::layout::Layout;
use dmh::parallel::map_indexed;
use dmh::policy::{
    derive_seed, rollout, rollout_random_assignment, EpisodeMetrics, Policy, RulePolicy,
};
use dmh::rules::Rule;

use crate::report::{DetailRow, ReportRow};

/// A named, repeatably constructible policy.
#[derive(Clone)]
pub enum PolicySpec {
    Rule(Rule),
    Random,
    Nn { name: String, artifact: Arc<PolicyArtifact> },
}

impl PolicySpec {
    pub fn name(&self) -> String {
        match self {
            PolicySpec::Rule(r) => r.name().to_string(),
            PolicySpec::Random => "random".to_string(),
            PolicySpec::Nn { name, .. } => name.clone(),
        }
    }

    fn build(&self, vehicle_count: usize) -> Box<dyn Policy> {
        match self {
            PolicySpec::Rule(r) => Box::new(RulePolicy { rule: *r }),
            PolicySpec::Nn { artifact, .. } => Box::new(NnPolicy {
                net: artifact.policy.clone(),
                vehicle_count,
            }),
            PolicySpec::Random => unreachable!("random runs through run_trial"),
        }
    }

    /// One seeded episode of this policy. The random agent draws uniformly
    /// from the feasible (task, vehicle) assignments; the others act through
    /// the engine's (rule, vehicle) interface.
    pub fn run_trial(
        &self,
        instance: &Instance,
        layout: &Arc<Layout>,
        config: &EngineConfig,
        epsilon: f64,
        seed: u64,
    ) -> Result<EpisodeMetrics, EngineError> {
        match self {
            PolicySpec::Random => {
                rollout_random_assignment(instance, layout, config, epsilon, seed)
            }
            _ => {
                let mut policy = self.build(instance.vehicles.len());
                rollout(policy.as_mut(), instance, layout, config, epsilon, seed)
            }
        }
    }

    /// Parses a rule/random name; anything else is treated as an artifact
    /// path by the caller.
    pub fn parse_builtin(s: &str) -> Option<PolicySpec> {
        if s.eq_ignore_ascii_case("random") {
            return Some(PolicySpec::Random);
        }
        Rule::parse(s).map(PolicySpec::Rule)
    }
}

/// Every (policy, instance) pair evaluated `trials` times; trial seeds are a
/// pure function of (seed, policy name, instance name, trial index), so
/// results do not depend on evaluation order or thread count. Rows come back
/// sorted by (instance, policy).
#[allow(clippy::too_many_arguments)]
pub fn run_benchmark(
    policies: &[PolicySpec],
    instances: &[Instance],
    layout: &Arc<Layout>,
    config: &EngineConfig,
    epsilon: f64,
    trials: usize,
    seed: u64,
    parallel: bool,
) -> Result<(Vec<ReportRow>, Vec<DetailRow>), EngineError> {
    assert!(trials >= 1);
    let mut pairs: Vec<(&PolicySpec, &Instance)> = Vec::new();
    for inst in instances {
        for p in policies {
            pairs.push((p, inst));
        }
    }
    pairs.sort_by(|a, b| (&a.1.name, a.0.name()).cmp(&(&b.1.name, b.0.name())));

    let mut rows = Vec::with_capacity(pairs.len());
    let mut details = Vec::with_capacity(pairs.len() * trials);
    for (spec, inst) in pairs {
        let name = spec.name();
        let results: Vec<Result<EpisodeMetrics, EngineError>> =
            map_indexed(trials, parallel, |t| {
                let salt = format!("{}|{}|{}", name, inst.name, t);
                spec.run_trial(inst, layout, config, epsilon, derive_seed(seed, &salt))
            });
        let mut metrics = Vec::with_capacity(trials);
        for r in results {
            metrics.push(r?);
        }
        for (t, m) in metrics.iter().enumerate() {
            details.push(DetailRow::from_metrics(&name, &inst.name, t, m));
        }
        let n = trials as f64;
        rows.push(ReportRow {
            policy: name.clone(),
            instance: inst.name.clone(),
            mean_makespan: metrics.iter().map(|m| m.makespan).sum::<f64>() / n,
            mean_tardiness: metrics.iter().map(|m| m.tardiness).sum::<f64>() / n,
            satisfaction_pct: 100.0
                * metrics.iter().filter(|m| m.constraint_satisfied).count() as f64
                / n,
            mean_decision_ms: metrics
                .iter()
                .map(|m| m.wall_time_per_decision.as_secs_f64() * 1e3)
                .sum::<f64>()
                / n,
            trials,
        });
    }
    Ok((rows, details))
}

/// Mean wall-clock milliseconds per policy decision, over at least `epochs`
/// decision epochs; only the policy call itself is timed.
pub fn measure_decision_time(
    spec: &PolicySpec,
    instance: &Instance,
    layout: &Arc<Layout>,
    config: &EngineConfig,
    epochs: usize,
    seed: u64,
) -> Result<f64, EngineError> {
    assert!(epochs >= 100);
    let mut total_ms = 0.0;
    let mut decisions = 0usize;
    let mut round = 0u64;
    while decisions < epochs {
        let m = spec.run_trial(
            instance,
            layout,
            config,
            f64::INFINITY,
            derive_seed(seed, &format!("latency{round}")),
        )?;
        total_ms += m.wall_time_per_decision.as_secs_f64() * 1e3 * m.decisions as f64;
        decisions += m.decisions;
        round += 1;
        if m.decisions == 0 {
            break;
        }
    }
    Ok(if decisions == 0 {
        0.0
    } else {
        total_ms / decisions as f64
    })
}

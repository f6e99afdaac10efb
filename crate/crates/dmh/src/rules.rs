//! The four dispatching rules with seeded uniform tie-breaking.

use rand::Rng;

use crate::layout::{Layout, SiteId};

/// Dispatching rule space with stable action-encoding indices 0..3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    Fcfs = 0,
    Edd = 1,
    Nvf = 2,
    Std = 3,
}

pub const ALL_RULES: [Rule; 4] = [Rule::Fcfs, Rule::Edd, Rule::Nvf, Rule::Std];
pub const RULE_COUNT: usize = 4;

impl Rule {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Rule> {
        ALL_RULES.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Rule::Fcfs => "fcfs",
            Rule::Edd => "edd",
            Rule::Nvf => "nvf",
            Rule::Std => "std",
        }
    }

    pub fn parse(name: &str) -> Option<Rule> {
        match name.to_ascii_lowercase().as_str() {
            "fcfs" => Some(Rule::Fcfs),
            "edd" => Some(Rule::Edd),
            "nvf" => Some(Rule::Nvf),
            "std" => Some(Rule::Std),
            _ => None,
        }
    }
}

/// A task staged for assignment, with site references already resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StagedTask {
    /// Index of the task within its instance.
    pub task_index: usize,
    pub pickup: SiteId,
    pub delivery: SiteId,
    pub arrival: f64,
    pub expiry: f64,
}

/// Priority key of `rule` for `task`; lower wins. `dist_to_pickup` is the
/// distance from the candidate vehicle's current position to the pickup site.
///
/// EDD defaults to the absolute due date `arrival + expiry`; `edd_literal`
/// switches to the window length `expiry - arrival` instead.
pub fn rule_key(
    rule: Rule,
    task: &StagedTask,
    dist_to_pickup: f64,
    layout: &Layout,
    edd_literal: bool,
) -> f64 {
    match rule {
        Rule::Fcfs => task.arrival,
        Rule::Edd => {
            if edd_literal {
                task.expiry - task.arrival
            } else {
                task.arrival + task.expiry
            }
        }
        Rule::Nvf => dist_to_pickup,
        Rule::Std => {
            dist_to_pickup
                + layout
                    .distance(task.pickup, task.delivery)
                    .expect("staged task sites are mutually reachable")
        }
    }
}

/// Picks the staging index minimizing the rule key; exact key ties are broken
/// uniformly at random. Panics on an empty staging list.
pub fn select_task<R: Rng>(
    rule: Rule,
    staging: &[StagedTask],
    dist_from_vehicle: impl Fn(SiteId) -> f64,
    layout: &Layout,
    edd_literal: bool,
    rng: &mut R,
) -> usize {
    assert!(!staging.is_empty(), "select_task requires staged tasks");
    let keys: Vec<f64> = staging
        .iter()
        .map(|t| rule_key(rule, t, dist_from_vehicle(t.pickup), layout, edd_literal))
        .collect();
    let min = keys.iter().copied().fold(f64::INFINITY, f64::min);
    let tied: Vec<usize> = (0..staging.len()).filter(|&i| keys[i] == min).collect();
    tied[rng.gen_range(0..tied.len())]
}

//! Discrete-event simulation of a material-handling episode with a
//! gym-style reset/step interface.
//!
//! A decision epoch is any simulation instant with at least one staged task
//! and at least one idle vehicle. `step` executes exactly one assignment and
//! then advances arrivals, deliveries, breakdowns and repairs until the next
//! epoch or episode end. Rewards are sparse: zero everywhere, negative
//! makespan on the terminal step. Per-step cost is the delay of tasks
//! completed during the step divided by the total task count, so episodic
//! cost sums exactly to the tardiness objective.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::instance::{validate, Instance};
use crate::layout::{Layout, SiteId};
use crate::rules::{self, Rule, StagedTask, RULE_COUNT};

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Number of task slots in the feature vector.
    pub k_max: usize,
    /// Divisor applied to every time/distance feature entry.
    pub feature_scale: f64,
    /// Use the window-length EDD key instead of the absolute due date.
    pub edd_literal: bool,
    /// Episodes are force-terminated at `horizon_factor * mean_gap * m`.
    pub horizon_factor: f64,
    pub event_log: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            k_max: 6,
            feature_scale: 1000.0,
            edd_literal: false,
            horizon_factor: 100.0,
            event_log: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("no episode in progress")]
    NotRunning,
    #[error("episode already terminal")]
    Terminal,
    #[error("action ({rule:?}, vehicle {vehicle}) is not in the valid set")]
    InvalidAction { rule: Rule, vehicle: usize },
    #[error("assignment (task {task}, vehicle {vehicle}) is not feasible")]
    InvalidAssignment { task: usize, vehicle: usize },
    #[error("metrics requested before the episode is terminal")]
    NotTerminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Idle,
    Working,
    Broken,
}

/// Current vehicle position: at a site, or part-way along an edge after a
/// mid-travel breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Position {
    At(SiteId),
    OnEdge {
        from: SiteId,
        to: SiteId,
        traveled: f64,
        length: f64,
    },
}

#[derive(Debug, Clone)]
struct Segment {
    from: SiteId,
    to: SiteId,
    /// Distance traveled on this segment by the route.
    dist: f64,
    /// Offset within the full edge at segment start (nonzero only when the
    /// route starts mid-edge).
    pre: f64,
}

#[derive(Debug, Clone)]
struct Route {
    segments: Vec<Segment>,
    total: f64,
    start_time: f64,
}

#[derive(Debug, Clone)]
pub struct VehicleState {
    pub velocity: f64,
    pub repair_time: f64,
    pub parking: SiteId,
    pub status: Status,
    pub position: Position,
    pub current_task: Option<usize>,
    /// Completed tasks and their finish times; `None` is the starting task.
    pub history: Vec<(Option<usize>, f64)>,
    pub repair_until: Option<f64>,
    route: Option<Route>,
    /// Bumped on assignment and breakdown; stale delivery events are dropped.
    generation: u64,
}

impl VehicleState {
    /// Distance to `target` from the current position, heading forward along
    /// the current edge when mid-edge.
    pub fn distance_to(&self, target: SiteId, layout: &Layout) -> f64 {
        match self.position {
            Position::At(p) => layout.distance(p, target).expect("connected layout"),
            Position::OnEdge {
                to,
                traveled,
                length,
                ..
            } => (length - traveled) + layout.distance(to, target).expect("connected layout"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Action {
    pub rule: Rule,
    pub vehicle: usize,
}

impl Action {
    /// Flat index over the rule-major action space D x V.
    pub fn flat_index(&self, vehicle_count: usize) -> usize {
        self.rule.index() * vehicle_count + self.vehicle
    }

    pub fn from_flat_index(index: usize, vehicle_count: usize) -> Option<Action> {
        let rule = Rule::from_index(index / vehicle_count)?;
        let vehicle = index % vehicle_count;
        Some(Action { rule, vehicle })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Vec<f64>,
    pub valid_actions: Vec<Action>,
    pub time: f64,
    pub terminal: bool,
}

impl Observation {
    /// Boolean mask over the flat action space, true for valid entries.
    pub fn action_mask(&self, vehicle_count: usize) -> Vec<bool> {
        let mut mask = vec![false; RULE_COUNT * vehicle_count];
        for a in &self.valid_actions {
            mask[a.flat_index(vehicle_count)] = true;
        }
        mask
    }
}

#[derive(Debug, Clone)]
pub struct StepInfo {
    /// (task index, vehicle index, rule) of the assignment just executed.
    pub assigned: Option<(usize, usize, Option<Rule>)>,
    pub events_processed: usize,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub cost: f64,
    pub terminal: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Arrival,
    Delivery,
    Repair,
    Breakdown,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    kind: EventKind,
    seq: u64,
    /// Task index for arrivals, vehicle index otherwise.
    subject: usize,
    /// Delivery generation or breakdown duration bits.
    payload: u64,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_key() == other.cmp_key()
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.cmp_key()
            .0
            .partial_cmp(&other.cmp_key().0)
            .expect("finite event times")
            .then(self.cmp_key().1.cmp(&other.cmp_key().1))
            .then(self.cmp_key().2.cmp(&other.cmp_key().2))
    }
}

impl Event {
    fn cmp_key(&self) -> (f64, EventKind, u64) {
        (self.time, self.kind, self.seq)
    }
}

struct ResolvedTask {
    pickup: SiteId,
    delivery: SiteId,
    arrival: f64,
    expiry: f64,
}

pub struct Engine {
    layout: Arc<Layout>,
    config: EngineConfig,
    tasks: Vec<ResolvedTask>,
    vehicles: Vec<VehicleState>,
    staging: Vec<usize>,
    events: BinaryHeap<Reverse<Event>>,
    seq: u64,
    now: f64,
    delivered: usize,
    per_task_delay: Vec<Option<f64>>,
    pending_cost: f64,
    terminal: bool,
    truncated: bool,
    horizon: f64,
    decisions: usize,
    rng: ChaCha8Rng,
    event_log: Vec<String>,
    running: bool,
}

impl Engine {
    pub fn new(layout: Arc<Layout>, config: EngineConfig) -> Self {
        Engine {
            layout,
            config,
            tasks: Vec::new(),
            vehicles: Vec::new(),
            staging: Vec::new(),
            events: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            delivered: 0,
            per_task_delay: Vec::new(),
            pending_cost: 0.0,
            terminal: false,
            truncated: false,
            horizon: f64::INFINITY,
            decisions: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            event_log: Vec::new(),
            running: false,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn vehicle_count(&self) -> usize {
        self.vehicles.len()
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn decisions(&self) -> usize {
        self.decisions
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn staged_tasks(&self) -> Vec<StagedTask> {
        self.staging
            .iter()
            .map(|&i| StagedTask {
                task_index: i,
                pickup: self.tasks[i].pickup,
                delivery: self.tasks[i].delivery,
                arrival: self.tasks[i].arrival,
                expiry: self.tasks[i].expiry,
            })
            .collect()
    }

    pub fn take_event_log(&mut self) -> Vec<String> {
        std::mem::take(&mut self.event_log)
    }

    fn log(&mut self, kind: &str, vehicle: Option<usize>, task: Option<usize>, detail: &str) {
        if self.config.event_log {
            let v = vehicle.map(|v| v.to_string()).unwrap_or_default();
            let t = task.map(|t| t.to_string()).unwrap_or_default();
            self.event_log
                .push(format!("{:.6},{kind},{v},{t},{detail}", self.now));
        }
    }

    fn push_event(&mut self, time: f64, kind: EventKind, subject: usize, payload: u64) {
        let seq = self.seq;
        self.seq += 1;
        self.events.push(Reverse(Event {
            time,
            kind,
            seq,
            subject,
            payload,
        }));
    }

    pub fn reset(&mut self, instance: &Instance, seed: u64) -> Result<Observation, EngineError> {
        let violations = validate(instance, &self.layout);
        if !violations.is_empty() {
            return Err(EngineError::InvalidInstance(
                violations
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("; "),
            ));
        }
        self.tasks = instance
            .tasks
            .iter()
            .map(|t| ResolvedTask {
                pickup: self.layout.resolve(&t.pickup).expect("validated"),
                delivery: self.layout.resolve(&t.delivery).expect("validated"),
                arrival: t.arrival,
                expiry: t.expiry,
            })
            .collect();
        self.vehicles = instance
            .vehicles
            .iter()
            .map(|s| {
                let parking = self.layout.resolve(&s.parking).expect("validated");
                VehicleState {
                    velocity: s.velocity,
                    repair_time: s.repair_time,
                    parking,
                    status: Status::Idle,
                    position: Position::At(parking),
                    current_task: None,
                    history: vec![(None, 0.0)],
                    repair_until: None,
                    route: None,
                    generation: 0,
                }
            })
            .collect();
        self.staging.clear();
        self.events.clear();
        self.seq = 0;
        self.now = 0.0;
        self.delivered = 0;
        self.per_task_delay = vec![None; self.tasks.len()];
        self.pending_cost = 0.0;
        self.terminal = false;
        self.truncated = false;
        self.decisions = 0;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.event_log.clear();
        self.running = true;

        let m = self.tasks.len();
        let mean_gap = if m >= 2 {
            let min = self.tasks.iter().map(|t| t.arrival).fold(f64::INFINITY, f64::min);
            let max = self.tasks.iter().map(|t| t.arrival).fold(0.0f64, f64::max);
            (max - min) / (m as f64 - 1.0)
        } else {
            60.0
        };
        self.horizon = self.config.horizon_factor * mean_gap.max(1.0) * m.max(1) as f64;

        for (i, t) in self.tasks.iter().enumerate() {
            let (time, subject) = (t.arrival, i);
            let seq = self.seq;
            self.seq += 1;
            self.events.push(Reverse(Event {
                time,
                kind: EventKind::Arrival,
                seq,
                subject,
                payload: 0,
            }));
        }
        for b in &instance.breakdowns {
            let seq = self.seq;
            self.seq += 1;
            self.events.push(Reverse(Event {
                time: b.time,
                kind: EventKind::Breakdown,
                seq,
                subject: b.vehicle,
                payload: b.duration.to_bits(),
            }));
        }

        if m == 0 {
            self.terminal = true;
            return Ok(self.observation());
        }
        self.advance();
        Ok(self.observation())
    }

    fn decision_possible(&self) -> bool {
        !self.staging.is_empty() && self.vehicles.iter().any(|v| v.status == Status::Idle)
    }

    /// Processes events until the next decision epoch, episode end or the
    /// truncation horizon. Returns the number of events processed.
    fn advance(&mut self) -> usize {
        let mut processed = 0;
        loop {
            if self.decision_possible() {
                break;
            }
            if self.delivered == self.tasks.len() {
                self.finish(false);
                break;
            }
            let next_time = match self.events.peek() {
                Some(Reverse(e)) => e.time,
                None => {
                    // No pending events, no decision, not everything
                    // delivered: cannot happen with a consistent state.
                    debug_assert!(false, "event queue drained before completion");
                    self.finish(true);
                    break;
                }
            };
            if next_time > self.horizon {
                self.now = self.horizon;
                self.finish(true);
                break;
            }
            self.now = next_time;
            while let Some(Reverse(e)) = self.events.peek().copied().filter(|Reverse(e)| e.time == next_time) {
                self.events.pop();
                self.apply_event(e);
                processed += 1;
            }
            self.check_conservation();
        }
        processed
    }

    fn apply_event(&mut self, e: Event) {
        match e.kind {
            EventKind::Arrival => {
                self.staging.push(e.subject);
                self.log("arrival", None, Some(e.subject), "");
            }
            EventKind::Delivery => {
                let v = e.subject;
                if self.vehicles[v].generation != e.payload {
                    return; // canceled by a breakdown
                }
                let task = self.vehicles[v].current_task.expect("working vehicle");
                let t = &self.tasks[task];
                let delay = (self.now - t.expiry - t.arrival).max(0.0);
                self.pending_cost += delay / self.tasks.len() as f64;
                self.per_task_delay[task] = Some(delay);
                self.delivered += 1;
                let delivery = t.delivery;
                let vehicle = &mut self.vehicles[v];
                vehicle.history.push((Some(task), self.now));
                vehicle.status = Status::Idle;
                vehicle.position = Position::At(delivery);
                vehicle.current_task = None;
                vehicle.route = None;
                self.log("delivery", Some(v), Some(task), &format!("delay={delay:.6}"));
            }
            EventKind::Breakdown => {
                let v = e.subject;
                if self.vehicles[v].status == Status::Broken {
                    return; // already under repair
                }
                let position = self.position_at(v, self.now);
                let released = self.vehicles[v].current_task;
                if let Some(task) = released {
                    self.staging.push(task);
                }
                let duration = f64::from_bits(e.payload);
                let until = self.now + duration;
                let vehicle = &mut self.vehicles[v];
                vehicle.position = position;
                vehicle.status = Status::Broken;
                vehicle.current_task = None;
                vehicle.route = None;
                vehicle.generation += 1;
                vehicle.repair_until = Some(until);
                self.push_event(until, EventKind::Repair, v, 0);
                let detail = format!("until={until:.6}");
                self.log("breakdown", Some(v), released, &detail);
            }
            EventKind::Repair => {
                let v = e.subject;
                let vehicle = &mut self.vehicles[v];
                debug_assert_eq!(vehicle.status, Status::Broken);
                vehicle.status = Status::Idle;
                vehicle.repair_until = None;
                self.log("repair", Some(v), None, "");
            }
        }
    }

    /// Interpolated position of vehicle `v` along its route at time `t`.
    fn position_at(&self, v: usize, t: f64) -> Position {
        let vehicle = &self.vehicles[v];
        let route = match &vehicle.route {
            Some(r) => r,
            None => return vehicle.position,
        };
        let d = ((t - route.start_time) * vehicle.velocity).clamp(0.0, route.total);
        let mut walked = 0.0;
        for seg in &route.segments {
            if d <= walked + seg.dist {
                let into = d - walked;
                if into <= 1e-12 {
                    return if seg.pre == 0.0 {
                        Position::At(seg.from)
                    } else {
                        Position::OnEdge {
                            from: seg.from,
                            to: seg.to,
                            traveled: seg.pre,
                            length: seg.pre + seg.dist,
                        }
                    };
                }
                if (seg.dist - into).abs() <= 1e-12 {
                    return Position::At(seg.to);
                }
                return Position::OnEdge {
                    from: seg.from,
                    to: seg.to,
                    traveled: seg.pre + into,
                    length: seg.pre + seg.dist,
                };
            }
            walked += seg.dist;
        }
        Position::At(
            route
                .segments
                .last()
                .map(|s| s.to)
                .unwrap_or(match vehicle.position {
                    Position::At(p) => p,
                    Position::OnEdge { to, .. } => to,
                }),
        )
    }

    fn build_route(&self, position: Position, pickup: SiteId, delivery: SiteId) -> Route {
        let mut segments = Vec::new();
        let start_site = match position {
            Position::At(p) => p,
            Position::OnEdge {
                from,
                to,
                traveled,
                length,
            } => {
                segments.push(Segment {
                    from,
                    to,
                    dist: length - traveled,
                    pre: traveled,
                });
                to
            }
        };
        let extend = |segments: &mut Vec<Segment>, from: SiteId, to: SiteId| {
            if from == to {
                return;
            }
            let path = self.layout.shortest_path(from, to).expect("connected layout");
            for pair in path.nodes.windows(2) {
                let len = self
                    .layout
                    .neighbors(pair[0])
                    .iter()
                    .filter(|(n, _)| *n == pair[1])
                    .map(|(_, l)| *l)
                    .fold(f64::INFINITY, f64::min);
                segments.push(Segment {
                    from: pair[0],
                    to: pair[1],
                    dist: len,
                    pre: 0.0,
                });
            }
        };
        extend(&mut segments, start_site, pickup);
        extend(&mut segments, pickup, delivery);
        let total = segments.iter().map(|s| s.dist).sum();
        Route {
            segments,
            total,
            start_time: self.now,
        }
    }

    pub fn valid_actions(&self) -> Vec<Action> {
        if self.terminal || self.staging.is_empty() {
            return Vec::new();
        }
        let mut actions = Vec::new();
        for rule in rules::ALL_RULES {
            for (v, vehicle) in self.vehicles.iter().enumerate() {
                if vehicle.status == Status::Idle {
                    actions.push(Action { rule, vehicle: v });
                }
            }
        }
        actions
    }

    pub fn observation(&self) -> Observation {
        Observation {
            features: self.featurize(),
            valid_actions: self.valid_actions(),
            time: self.now,
            terminal: self.terminal,
        }
    }

    /// Fixed-layout feature vector:
    /// `[ |U| ]` then `k_max` arrival-ordered task slots of
    /// `[remaining, waiting, pickup-delivery distance]`, then per vehicle a
    /// status one-hot and the minimal staged service time from its position.
    /// Time and distance entries are divided by `feature_scale`.
    pub fn featurize(&self) -> Vec<f64> {
        let scale = self.config.feature_scale;
        let mut features = Vec::with_capacity(1 + 3 * self.config.k_max + 4 * self.vehicles.len());
        features.push(self.staging.len() as f64);

        let mut staged = self.staged_tasks();
        staged.sort_by(|a, b| {
            a.arrival
                .partial_cmp(&b.arrival)
                .unwrap()
                .then(a.task_index.cmp(&b.task_index))
        });
        for slot in 0..self.config.k_max {
            match staged.get(slot) {
                Some(t) => {
                    features.push((t.arrival + t.expiry - self.now) / scale);
                    features.push((self.now - t.arrival) / scale);
                    features.push(
                        self.layout.distance(t.pickup, t.delivery).expect("connected") / scale,
                    );
                }
                None => features.extend_from_slice(&[0.0, 0.0, 0.0]),
            }
        }
        for vehicle in &self.vehicles {
            let one_hot = match vehicle.status {
                Status::Idle => [1.0, 0.0, 0.0],
                Status::Working => [0.0, 1.0, 0.0],
                Status::Broken => [0.0, 0.0, 1.0],
            };
            features.extend_from_slice(&one_hot);
            let min_service = staged
                .iter()
                .map(|t| {
                    let d = vehicle.distance_to(t.pickup, &self.layout)
                        + self.layout.distance(t.pickup, t.delivery).expect("connected");
                    d / vehicle.velocity
                })
                .fold(f64::INFINITY, f64::min);
            features.push(if min_service.is_finite() {
                min_service / scale
            } else {
                0.0
            });
        }
        features
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome, EngineError> {
        if !self.running {
            return Err(EngineError::NotRunning);
        }
        if self.terminal {
            return Err(EngineError::Terminal);
        }
        let valid = self.valid_actions();
        if !valid.contains(&action) {
            return Err(EngineError::InvalidAction {
                rule: action.rule,
                vehicle: action.vehicle,
            });
        }
        self.decisions += 1;
        self.pending_cost = 0.0;

        // Rule-based task selection from the staging list.
        let staged = self.staged_tasks();
        let vehicle_pos = self.vehicles[action.vehicle].position;
        let layout = Arc::clone(&self.layout);
        let dist = |p: SiteId| match vehicle_pos {
            Position::At(site) => layout.distance(site, p).expect("connected"),
            Position::OnEdge {
                to,
                traveled,
                length,
                ..
            } => (length - traveled) + layout.distance(to, p).expect("connected"),
        };
        let picked = rules::select_task(
            action.rule,
            &staged,
            dist,
            &self.layout,
            self.config.edd_literal,
            &mut self.rng,
        );
        let task = staged[picked].task_index;
        Ok(self.assign(task, action.vehicle, Some(action.rule)))
    }

    /// Assigns a specific staged task to an idle vehicle, bypassing rule-based
    /// selection. Used by baselines that act directly on feasible
    /// (task, vehicle) pairs; the same feasibility mask as [`Engine::step`]
    /// applies.
    pub fn step_with_task(&mut self, task: usize, vehicle: usize) -> Result<StepOutcome, EngineError> {
        if !self.running {
            return Err(EngineError::NotRunning);
        }
        if self.terminal {
            return Err(EngineError::Terminal);
        }
        if vehicle >= self.vehicles.len()
            || self.vehicles[vehicle].status != Status::Idle
            || !self.staging.contains(&task)
        {
            return Err(EngineError::InvalidAssignment { task, vehicle });
        }
        self.decisions += 1;
        self.pending_cost = 0.0;
        Ok(self.assign(task, vehicle, None))
    }

    fn assign(&mut self, task: usize, v: usize, rule: Option<Rule>) -> StepOutcome {
        let staging_slot = self
            .staging
            .iter()
            .position(|&t| t == task)
            .expect("staged task present");
        self.staging.swap_remove(staging_slot);

        let route = self.build_route(
            self.vehicles[v].position,
            self.tasks[task].pickup,
            self.tasks[task].delivery,
        );
        let finish = self.now + route.total / self.vehicles[v].velocity;
        self.vehicles[v].generation += 1;
        let generation = self.vehicles[v].generation;
        self.vehicles[v].status = Status::Working;
        self.vehicles[v].current_task = Some(task);
        self.vehicles[v].route = Some(route);
        self.push_event(finish, EventKind::Delivery, v, generation);
        self.log(
            "assign",
            Some(v),
            Some(task),
            rule.map_or("direct", Rule::name),
        );

        let events_processed = if self.decision_possible() {
            0
        } else {
            self.advance()
        };

        let reward = if self.terminal { -self.makespan() } else { 0.0 };
        StepOutcome {
            observation: self.observation(),
            reward,
            cost: std::mem::take(&mut self.pending_cost),
            terminal: self.terminal,
            info: StepInfo {
                assigned: Some((task, v, rule)),
                events_processed,
            },
        }
    }

    /// Terminal bookkeeping. On truncation every unfinished task is charged
    /// `max(horizon - arrival - expiry, 0)`.
    fn finish(&mut self, truncated: bool) {
        self.terminal = true;
        self.truncated = truncated;
        if truncated {
            let m = self.tasks.len();
            for (i, t) in self.tasks.iter().enumerate() {
                if self.per_task_delay[i].is_none() {
                    let delay = (self.horizon - t.arrival - t.expiry).max(0.0);
                    self.per_task_delay[i] = Some(delay);
                    self.pending_cost += delay / m as f64;
                }
            }
        }
    }

    pub fn was_truncated(&self) -> bool {
        self.truncated
    }

    /// Maximal last finish time over vehicles; vehicles that served nothing
    /// contribute the starting-task time 0.
    pub fn makespan(&self) -> f64 {
        self.vehicles
            .iter()
            .map(|v| v.history.last().map(|&(_, ft)| ft).unwrap_or(0.0))
            .fold(0.0, f64::max)
    }

    /// Average clamped task delay, including truncation charges.
    pub fn tardiness(&self) -> f64 {
        if self.tasks.is_empty() {
            return 0.0;
        }
        self.per_task_delay
            .iter()
            .map(|d| d.unwrap_or(0.0))
            .sum::<f64>()
            / self.tasks.len() as f64
    }

    /// Eq.-style tardiness recomputed from vehicle histories only (no
    /// truncation charges); used to cross-check the cost decomposition.
    pub fn tardiness_from_history(&self) -> f64 {
        if self.tasks.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for v in &self.vehicles {
            for &(task, ft) in &v.history {
                if let Some(i) = task {
                    let t = &self.tasks[i];
                    total += (ft - t.expiry - t.arrival).max(0.0);
                }
            }
        }
        total / self.tasks.len() as f64
    }

    pub fn per_task_delays(&self) -> Vec<f64> {
        self.per_task_delay
            .iter()
            .map(|d| d.unwrap_or(0.0))
            .collect()
    }

    /// Task conservation: delivered + staged + carried + future = m.
    fn check_conservation(&self) {
        if cfg!(debug_assertions) {
            let carried = self
                .vehicles
                .iter()
                .filter(|v| v.current_task.is_some())
                .count();
            let future = self
                .events
                .iter()
                .filter(|Reverse(e)| e.kind == EventKind::Arrival)
                .count();
            debug_assert_eq!(
                self.delivered + self.staging.len() + carried + future,
                self.tasks.len(),
                "task conservation violated at t={}",
                self.now
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{BreakdownEvent, Task, VehicleSpec};

    fn layout() -> Arc<Layout> {
        Arc::new(Layout::bundled_default())
    }

    fn instance(tasks: Vec<Task>, vehicles: usize, breakdowns: Vec<BreakdownEvent>) -> Instance {
        Instance {
            version: 1,
            name: "test".into(),
            layout_ref: "bundled-default".into(),
            vehicles: (0..vehicles)
                .map(|_| VehicleSpec {
                    velocity: 10.0,
                    repair_time: 20.0,
                    parking: "carport".into(),
                })
                .collect(),
            tasks,
            breakdowns,
            seed_of_origin: 0,
        }
    }

    fn task(pickup: &str, delivery: &str, arrival: f64, expiry: f64) -> Task {
        Task {
            pickup: pickup.into(),
            delivery: delivery.into(),
            arrival,
            expiry,
        }
    }

    #[test]
    fn step_with_task_assigns_the_requested_task() {
        let mut engine = Engine::new(layout(), EngineConfig::default());
        let inst = instance(
            vec![
                task("st1", "warehouse", 0.0, 200.0),
                task("st2", "st3", 0.0, 200.0),
            ],
            2,
            vec![],
        );
        engine.reset(&inst, 0).unwrap();
        let outcome = engine.step_with_task(1, 1).unwrap();
        assert_eq!(outcome.info.assigned, Some((1, 1, None)));
        assert_eq!(engine.vehicles()[1].status, Status::Working);
        let staged = engine.staged_tasks();
        assert_eq!(staged.len(), 1);
        assert_eq!(staged[0].task_index, 0);
    }

    #[test]
    fn step_with_task_rejects_infeasible_assignments() {
        let mut engine = Engine::new(layout(), EngineConfig::default());
        let inst = instance(
            vec![
                task("st1", "warehouse", 0.0, 200.0),
                task("st2", "st3", 50.0, 200.0),
            ],
            1,
            vec![],
        );
        engine.reset(&inst, 0).unwrap();
        // Task 1 has not arrived yet, vehicle 3 does not exist.
        assert!(matches!(
            engine.step_with_task(1, 0),
            Err(EngineError::InvalidAssignment { task: 1, vehicle: 0 })
        ));
        assert!(matches!(
            engine.step_with_task(0, 3),
            Err(EngineError::InvalidAssignment { task: 0, vehicle: 3 })
        ));
        // The only vehicle is now working, so no assignment is feasible.
        engine.step_with_task(0, 0).unwrap();
        assert!(engine.step_with_task(1, 0).is_err() || engine.is_terminal());
    }

    #[test]
    fn empty_instance_is_immediately_terminal() {
        let mut engine = Engine::new(layout(), EngineConfig::default());
        let obs = engine.reset(&instance(vec![], 1, vec![]), 0).unwrap();
        assert!(obs.terminal);
        assert!(obs.valid_actions.is_empty());
        assert_eq!(engine.makespan(), 0.0);
        assert_eq!(engine.tardiness(), 0.0);
    }

    #[test]
    fn reset_advances_to_first_arrival() {
        let mut engine = Engine::new(layout(), EngineConfig::default());
        let inst = instance(vec![task("st1", "warehouse", 12.0, 100.0)], 1, vec![]);
        let obs = engine.reset(&inst, 0).unwrap();
        assert_eq!(obs.time, 12.0);
        assert_eq!(obs.valid_actions.len(), 4); // 4 rules x 1 idle vehicle
    }

    #[test]
    fn reset_is_deterministic() {
        let mut engine = Engine::new(layout(), EngineConfig::default());
        let inst = instance(
            vec![
                task("st1", "warehouse", 5.0, 100.0),
                task("st2", "st3", 9.0, 80.0),
            ],
            2,
            vec![],
        );
        let a = engine.reset(&inst, 7).unwrap();
        let b = engine.reset(&inst, 7).unwrap();
        assert_eq!(a, b);
    }

    // Hand event trace: vehicle at carport (velocity 10), task st1 -> warehouse
    // arriving at t=0.
    // carport -> st1: 10 + 40 + 10 = 60 distance, 6 time units.
    // st1 -> warehouse: 10 + 40 + 10 = 60 distance, 6 time units.
    // FT = 12; expiry 5 -> delay 7; reward -12.
    #[test]
    fn single_task_hand_trace() {
        let mut engine = Engine::new(layout(), EngineConfig::default());
        let inst = instance(vec![task("st1", "warehouse", 0.0, 5.0)], 1, vec![]);
        let obs = engine.reset(&inst, 0).unwrap();
        assert_eq!(obs.time, 0.0);
        let out = engine
            .step(Action {
                rule: Rule::Fcfs,
                vehicle: 0,
            })
            .unwrap();
        assert!(out.terminal);
        assert_eq!(out.reward, -12.0);
        assert_eq!(out.cost, 7.0);
        assert_eq!(engine.makespan(), 12.0);
        assert_eq!(engine.tardiness(), 7.0);
    }

    #[test]
    fn forced_assignment_sets_working() {
        let mut engine = Engine::new(layout(), EngineConfig::default());
        let inst = instance(
            vec![
                task("st1", "warehouse", 0.0, 500.0),
                task("st2", "st4", 0.0, 500.0),
            ],
            2,
            vec![],
        );
        engine.reset(&inst, 0).unwrap();
        let out = engine
            .step(Action {
                rule: Rule::Fcfs,
                vehicle: 0,
            })
            .unwrap();
        assert_eq!(engine.vehicles()[0].status, Status::Working);
        assert!(!out.terminal);
    }

    #[test]
    fn invalid_action_rejected() {
        let mut engine = Engine::new(layout(), EngineConfig::default());
        let inst = instance(vec![task("st1", "warehouse", 0.0, 500.0)], 1, vec![]);
        engine.reset(&inst, 0).unwrap();
        let err = engine
            .step(Action {
                rule: Rule::Fcfs,
                vehicle: 5,
            })
            .unwrap_err();
        assert!(matches!(err, EngineError::InvalidAction { .. }));
    }

    // Breakdown at t=3 while carrying: task returns to staging with its
    // original arrival, vehicle broken until t=3+duration.
    #[test]
    fn breakdown_releases_task() {
        let mut engine = Engine::new(layout(), EngineConfig::default());
        let inst = instance(
            vec![task("st1", "warehouse", 0.0, 500.0)],
            1,
            vec![BreakdownEvent {
                vehicle: 0,
                time: 3.0,
                duration: 10.0,
            }],
        );
        engine.reset(&inst, 0).unwrap();
        let out = engine
            .step(Action {
                rule: Rule::Fcfs,
                vehicle: 0,
            })
            .unwrap();
        // After the breakdown the vehicle repairs at t=13, becoming idle with
        // the task staged again: that is the next decision epoch.
        assert_eq!(out.observation.time, 13.0);
        assert!(!out.terminal);
        let staged = engine.staged_tasks();
        assert_eq!(staged.len(), 1);
        assert_eq!(staged[0].arrival, 0.0);
        assert_eq!(engine.vehicles()[0].status, Status::Idle);
        // Vehicle broke 30 distance units from carport along carport->st1.
        match engine.vehicles()[0].position {
            Position::OnEdge { traveled, .. } => assert_eq!(traveled, 10.0),
            Position::At(site) => {
                // breakdown at t=3 => 30 units: carport(10) -> j5(20@j4)... the
                // position lands mid-corridor, never back at a terminal site.
                assert_ne!(site, engine.layout().resolve("carport").unwrap());
            }
        }
        // Finishing the episode from the repaired state still works.
        let out = engine
            .step(Action {
                rule: Rule::Fcfs,
                vehicle: 0,
            })
            .unwrap();
        assert!(out.terminal);
    }

    #[test]
    fn valid_actions_scale_with_idle_vehicles() {
        let mut engine = Engine::new(layout(), EngineConfig::default());
        let inst = instance(
            vec![
                task("st1", "warehouse", 0.0, 500.0),
                task("st2", "st4", 0.0, 500.0),
            ],
            2,
            vec![],
        );
        let obs = engine.reset(&inst, 0).unwrap();
        assert_eq!(obs.valid_actions.len(), 8);
        engine
            .step(Action {
                rule: Rule::Std,
                vehicle: 0,
            })
            .unwrap();
        // Same timestamp, one idle vehicle remains, one staged task.
        assert_eq!(engine.valid_actions().len(), 4);
    }

    #[test]
    fn feature_vector_layout() {
        let mut engine = Engine::new(layout(), EngineConfig::default());
        let inst = instance(vec![task("st1", "warehouse", 0.0, 100.0)], 2, vec![]);
        let obs = engine.reset(&inst, 0).unwrap();
        assert_eq!(obs.features.len(), 1 + 3 * 6 + 4 * 2);
        assert_eq!(obs.features[0], 1.0);
        // Slot 0: remaining 100, waiting 0, d(st1, warehouse) = 60.
        assert_eq!(obs.features[1], 0.1);
        assert_eq!(obs.features[2], 0.0);
        assert_eq!(obs.features[3], 0.06);
        // Idle one-hot and min service time (60 + 60)/10/1000 for both vehicles.
        let base = 1 + 18;
        assert_eq!(&obs.features[base..base + 4], &[1.0, 0.0, 0.0, 0.012]);
    }

    #[test]
    fn empty_staging_features_are_zero() {
        let mut engine = Engine::new(layout(), EngineConfig::default());
        let inst = instance(vec![], 2, vec![]);
        let obs = engine.reset(&inst, 0).unwrap();
        assert_eq!(obs.features[0], 0.0);
        for i in 1..19 {
            assert_eq!(obs.features[i], 0.0);
        }
        assert_eq!(&obs.features[19..23], &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn cost_decomposes_to_tardiness() {
        let mut engine = Engine::new(layout(), EngineConfig::default());
        let inst = instance(
            vec![
                task("st1", "warehouse", 0.0, 5.0),
                task("st2", "st4", 10.0, 8.0),
                task("st3", "st1", 30.0, 600.0),
            ],
            2,
            vec![BreakdownEvent {
                vehicle: 0,
                time: 7.0,
                duration: 15.0,
            }],
        );
        let mut obs = engine.reset(&inst, 3).unwrap();
        let mut total_cost = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        while !obs.terminal {
            use rand::Rng;
            let a = obs.valid_actions[rng.gen_range(0..obs.valid_actions.len())];
            let out = engine.step(a).unwrap();
            total_cost += out.cost;
            obs = out.observation;
        }
        assert!((total_cost - engine.tardiness()).abs() < 1e-9);
        assert!((engine.tardiness() - engine.tardiness_from_history()).abs() < 1e-9);
    }

    #[test]
    fn event_log_is_emitted_when_enabled() {
        let config = EngineConfig {
            event_log: true,
            ..Default::default()
        };
        let mut engine = Engine::new(layout(), config);
        let inst = instance(vec![task("st1", "warehouse", 0.0, 5.0)], 1, vec![]);
        engine.reset(&inst, 0).unwrap();
        engine
            .step(Action {
                rule: Rule::Fcfs,
                vehicle: 0,
            })
            .unwrap();
        let log = engine.take_event_log();
        assert!(log.iter().any(|l| l.contains(",arrival,")));
        assert!(log.iter().any(|l| l.contains(",assign,")));
        assert!(log.iter().any(|l| l.contains(",delivery,")));
        for line in &log {
            assert_eq!(line.split(',').count(), 5, "line `{line}`");
        }
    }
}

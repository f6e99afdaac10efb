//! Episode scenarios: tasks with arrival/expiry windows, vehicle specs and a
//! deterministic breakdown schedule, plus a seeded generator and the mutation
//! operator used to derive unseen instances from training ones.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{Layout, SiteKind};

pub const INSTANCE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub pickup: String,
    pub delivery: String,
    pub arrival: f64,
    pub expiry: f64,
}

impl Task {
    /// Absolute due time: arrival plus expiry window.
    pub fn due(&self) -> f64 {
        self.arrival + self.expiry
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub velocity: f64,
    pub repair_time: f64,
    pub parking: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownEvent {
    pub vehicle: usize,
    pub time: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub version: u32,
    pub name: String,
    pub layout_ref: String,
    pub vehicles: Vec<VehicleSpec>,
    pub tasks: Vec<Task>,
    pub breakdowns: Vec<BreakdownEvent>,
    pub seed_of_origin: u64,
}

impl Instance {
    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn vehicle_count(&self) -> usize {
        self.vehicles.len()
    }

    pub fn slowest_velocity(&self) -> f64 {
        self.vehicles
            .iter()
            .map(|v| v.velocity)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("instance parse error: {0}")]
    Parse(String),
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("generator parameters invalid: {0}")]
    BadParams(String),
    #[error("layout lacks required site kinds: {0}")]
    MissingSites(String),
}

/// A single invariant violation, reported with the path of the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    pub task_count: usize,
    /// Upper bound on tasks sharing one arrival epoch.
    pub max_tasks_per_epoch: usize,
    /// Truncated-normal inter-arrival gap between epochs.
    pub gap_mean: f64,
    pub gap_std: f64,
    /// Uniform handling allowance added to the expiry window.
    pub handling_min: f64,
    pub handling_max: f64,
    /// Expiry = slack * minimal travel time + handling allowance.
    pub slack: f64,
    pub vehicle_count: usize,
    pub velocity: f64,
    pub repair_time: f64,
    pub breakdowns_min: usize,
    pub breakdowns_max: usize,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            task_count: 40,
            max_tasks_per_epoch: 6,
            gap_mean: 60.0,
            gap_std: 50.0,
            handling_min: 20.0,
            handling_max: 70.0,
            slack: 1.5,
            vehicle_count: 2,
            velocity: 2.0,
            repair_time: 50.0,
            breakdowns_min: 1,
            breakdowns_max: 2,
        }
    }
}

impl GeneratorParams {
    fn check(&self) -> Result<(), InstanceError> {
        if self.vehicle_count == 0 {
            return Err(InstanceError::BadParams("vehicle_count must be >= 1".into()));
        }
        if self.max_tasks_per_epoch == 0 {
            return Err(InstanceError::BadParams(
                "max_tasks_per_epoch must be >= 1".into(),
            ));
        }
        if !(self.gap_std >= 0.0) || !(self.gap_mean > 0.0) {
            return Err(InstanceError::BadParams("gap distribution ill-formed".into()));
        }
        if !(self.handling_min >= 0.0) || self.handling_max < self.handling_min {
            return Err(InstanceError::BadParams(
                "handling distribution ill-formed".into(),
            ));
        }
        if !(self.slack >= 1.0) {
            return Err(InstanceError::BadParams("slack must be >= 1".into()));
        }
        if !(self.velocity > 0.0) || !(self.repair_time >= 0.0) {
            return Err(InstanceError::BadParams("vehicle parameters ill-formed".into()));
        }
        if self.breakdowns_max < self.breakdowns_min {
            return Err(InstanceError::BadParams("breakdown range ill-formed".into()));
        }
        Ok(())
    }
}

/// Positive truncated-normal draw; resamples nonpositive values.
fn positive_normal(rng: &mut ChaCha8Rng, mean: f64, std: f64) -> f64 {
    let dist = Normal::new(mean, std).expect("valid normal");
    loop {
        let x = dist.sample(rng);
        if x > 0.0 {
            return x;
        }
    }
}

pub fn generate_instance(
    params: &GeneratorParams,
    layout: &Layout,
    layout_ref: &str,
    name: &str,
    seed: u64,
) -> Result<Instance, InstanceError> {
    params.check()?;
    let workstations = layout.sites_of_kind(SiteKind::Workstation);
    let mut deliveries = workstations.clone();
    deliveries.extend(layout.sites_of_kind(SiteKind::Warehouse));
    let carports = layout.sites_of_kind(SiteKind::Carport);
    if workstations.is_empty() || deliveries.len() < 2 || carports.is_empty() {
        return Err(InstanceError::MissingSites(
            "need workstations, a delivery site and a carport".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let handling = Uniform::new_inclusive(params.handling_min, params.handling_max);

    let vehicles: Vec<VehicleSpec> = (0..params.vehicle_count)
        .map(|i| VehicleSpec {
            velocity: params.velocity,
            repair_time: params.repair_time,
            parking: layout.site(carports[i % carports.len()]).id.clone(),
        })
        .collect();
    let slowest = vehicles
        .iter()
        .map(|v| v.velocity)
        .fold(f64::INFINITY, f64::min);

    let mut tasks = Vec::with_capacity(params.task_count);
    let mut epoch = 0.0;
    let mut remaining = params.task_count;
    while remaining > 0 {
        epoch += positive_normal(&mut rng, params.gap_mean, params.gap_std);
        let count = rng.gen_range(1..=params.max_tasks_per_epoch.min(remaining));
        for _ in 0..count {
            let pickup = workstations[rng.gen_range(0..workstations.len())];
            let delivery = loop {
                let d = deliveries[rng.gen_range(0..deliveries.len())];
                if d != pickup {
                    break d;
                }
            };
            let tt = layout
                .travel_time(pickup, delivery, slowest)
                .map_err(|e| InstanceError::MissingSites(e.to_string()))?;
            tasks.push(Task {
                pickup: layout.site(pickup).id.clone(),
                delivery: layout.site(delivery).id.clone(),
                arrival: epoch,
                expiry: params.slack * tt + handling.sample(&mut rng),
            });
        }
        remaining -= count;
    }

    let horizon = tasks.last().map(|t| t.arrival).unwrap_or(0.0).max(1.0);
    let n_breakdowns = rng.gen_range(params.breakdowns_min..=params.breakdowns_max);
    let breakdowns = (0..n_breakdowns)
        .map(|_| {
            let vehicle = rng.gen_range(0..vehicles.len());
            BreakdownEvent {
                vehicle,
                time: rng.gen_range(0.0..horizon),
                duration: vehicles[vehicle].repair_time.max(1.0),
            }
        })
        .collect();

    Ok(Instance {
        version: INSTANCE_FORMAT_VERSION,
        name: name.to_string(),
        layout_ref: layout_ref.to_string(),
        vehicles,
        tasks,
        breakdowns,
        seed_of_origin: seed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MutationParams {
    /// Fraction of tasks whose arrival time is perturbed.
    pub arrival_fraction: f64,
    /// Fraction of tasks whose pickup/delivery pair is resampled.
    pub route_fraction: f64,
    pub arrival_std: f64,
    pub handling_min: f64,
    pub handling_max: f64,
    pub slack: f64,
}

impl Default for MutationParams {
    fn default() -> Self {
        MutationParams {
            arrival_fraction: 0.3,
            route_fraction: 0.2,
            arrival_std: 20.0,
            handling_min: 20.0,
            handling_max: 70.0,
            slack: 1.5,
        }
    }
}

/// Derives an unseen instance from a training one. Deterministic for
/// `(instance, params, seed)`; task and vehicle counts are preserved.
pub fn mutate_instance(
    instance: &Instance,
    layout: &Layout,
    params: &MutationParams,
    seed: u64,
) -> Result<Instance, InstanceError> {
    if params.arrival_fraction == 0.0 && params.route_fraction == 0.0 {
        return Ok(instance.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = instance.clone();
    out.seed_of_origin = seed;
    let m = out.tasks.len();

    let workstations = layout.sites_of_kind(SiteKind::Workstation);
    let mut deliveries = workstations.clone();
    deliveries.extend(layout.sites_of_kind(SiteKind::Warehouse));
    let slowest = instance.slowest_velocity();
    let handling = Uniform::new_inclusive(params.handling_min, params.handling_max);
    let delta = Normal::new(0.0, params.arrival_std)
        .map_err(|e| InstanceError::BadParams(e.to_string()))?;

    let pick = |rng: &mut ChaCha8Rng, count: usize| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..m).collect();
        idx.shuffle(rng);
        idx.truncate(count);
        idx
    };

    let n_arrival = (params.arrival_fraction * m as f64).ceil() as usize;
    for i in pick(&mut rng, n_arrival.min(m)) {
        let old = out.tasks[i].arrival;
        out.tasks[i].arrival = loop {
            let cand = (old + delta.sample(&mut rng)).max(0.0);
            if cand != old {
                break cand;
            }
        };
    }

    let n_route = (params.route_fraction * m as f64).ceil() as usize;
    for i in pick(&mut rng, n_route.min(m)) {
        let pickup = workstations[rng.gen_range(0..workstations.len())];
        let delivery = loop {
            let d = deliveries[rng.gen_range(0..deliveries.len())];
            if d != pickup {
                break d;
            }
        };
        let tt = layout
            .travel_time(pickup, delivery, slowest)
            .map_err(|e| InstanceError::MissingSites(e.to_string()))?;
        out.tasks[i].pickup = layout.site(pickup).id.clone();
        out.tasks[i].delivery = layout.site(delivery).id.clone();
        out.tasks[i].expiry = params.slack * tt + handling.sample(&mut rng);
    }

    let horizon = out
        .tasks
        .iter()
        .map(|t| t.arrival)
        .fold(0.0f64, f64::max)
        .max(1.0);
    for b in &mut out.breakdowns {
        b.time = rng.gen_range(0.0..horizon);
    }
    Ok(out)
}

/// Layout-independent invariant checks applied on load.
fn structural_violations(instance: &Instance) -> Vec<Violation> {
    let mut v = Vec::new();
    let mut push = |path: String, message: &str| {
        v.push(Violation {
            path,
            message: message.into(),
        })
    };
    if instance.vehicles.is_empty() {
        push("vehicles".into(), "at least one vehicle is required");
    }
    for (i, t) in instance.tasks.iter().enumerate() {
        if t.pickup == t.delivery {
            push(format!("tasks[{i}].delivery"), "pickup equals delivery");
        }
        if !(t.arrival >= 0.0) {
            push(format!("tasks[{i}].arrival"), "arrival must be >= 0");
        }
        if !(t.expiry > 0.0) {
            push(format!("tasks[{i}].expiry"), "expiry must be > 0");
        }
    }
    for (i, s) in instance.vehicles.iter().enumerate() {
        if !(s.velocity > 0.0) {
            push(format!("vehicles[{i}].velocity"), "velocity must be > 0");
        }
        if !(s.repair_time >= 0.0) {
            push(format!("vehicles[{i}].repair_time"), "repair_time must be >= 0");
        }
    }
    for (i, b) in instance.breakdowns.iter().enumerate() {
        if b.vehicle >= instance.vehicles.len() {
            push(
                format!("breakdowns[{i}].vehicle"),
                "vehicle index out of range",
            );
        }
        if !(b.time >= 0.0) {
            push(format!("breakdowns[{i}].time"), "time must be >= 0");
        }
        if !(b.duration > 0.0) {
            push(format!("breakdowns[{i}].duration"), "duration must be > 0");
        }
    }
    v
}

pub fn load_instance(document: &str) -> Result<Instance, InstanceError> {
    let instance: Instance =
        serde_json::from_str(document).map_err(|e| InstanceError::Parse(e.to_string()))?;
    let violations = structural_violations(&instance);
    if violations.is_empty() {
        Ok(instance)
    } else {
        Err(InstanceError::Invalid(
            violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; "),
        ))
    }
}

pub fn save_instance(instance: &Instance) -> String {
    serde_json::to_string_pretty(instance).expect("instance serializes")
}

/// Full validation against a layout. Returns all violations; empty means the
/// instance is consistent with the layout.
pub fn validate(instance: &Instance, layout: &Layout) -> Vec<Violation> {
    let mut v = structural_violations(instance);
    let mut check_site = |path: String, id: &str, kinds: &[SiteKind]| match layout.resolve(id) {
        Ok(site) => {
            let kind = layout.site(site).kind;
            if !kinds.contains(&kind) {
                v.push(Violation {
                    path,
                    message: format!("site `{id}` has kind {kind}, expected one of {kinds:?}"),
                });
            }
        }
        Err(_) => v.push(Violation {
            path,
            message: format!("unknown site `{id}`"),
        }),
    };
    for (i, t) in instance.tasks.iter().enumerate() {
        check_site(
            format!("tasks[{i}].pickup"),
            &t.pickup,
            &[SiteKind::Workstation],
        );
        check_site(
            format!("tasks[{i}].delivery"),
            &t.delivery,
            &[SiteKind::Workstation, SiteKind::Warehouse],
        );
    }
    for (i, s) in instance.vehicles.iter().enumerate() {
        check_site(
            format!("vehicles[{i}].parking"),
            &s.parking,
            &[SiteKind::Carport],
        );
    }
    v
}

//! Scenario generation: arrivals, road choice, parameter jitter and non-cooperative behaviour.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::config::{BehaviorKind, ConfigError, ScenarioConfig};
use crate::kinematics::{KinematicLimits, RoadGeometry, Vehicle, VehicleId, VehicleState};

/// Relative magnitude of the random perturbation applied to geometric parameters.
pub const JITTER: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoncoopBehavior {
    ConstantSpeed,
    /// Full braking for `duration` seconds once the front passes `start`.
    BrakingPulse { start: f64, duration: f64 },
    /// Uniform random acceleration per tick for `duration` seconds once the front passes `start`.
    RandomBounded { start: f64, duration: f64 },
}

impl NoncoopBehavior {
    pub fn from_kind(kind: BehaviorKind, rng: &mut impl Rng) -> Self {
        match kind {
            BehaviorKind::ConstantSpeed => NoncoopBehavior::ConstantSpeed,
            BehaviorKind::BrakingPulse => NoncoopBehavior::BrakingPulse { start: -60.0, duration: 3.0 },
            BehaviorKind::RandomBounded => NoncoopBehavior::RandomBounded { start: -80.0, duration: 5.0 },
            BehaviorKind::Mixed => {
                let kinds = [BehaviorKind::ConstantSpeed, BehaviorKind::BrakingPulse, BehaviorKind::RandomBounded];
                Self::from_kind(kinds[rng.gen_range(0..kinds.len())], rng)
            }
        }
    }
}

/// Per-vehicle memory of a behaviour: when its window opened.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BehaviorState {
    pub window_start: Option<f64>,
}

/// Acceleration of a non-cooperative vehicle for the next tick.
pub fn noncoop_policy_step(
    state: VehicleState,
    behavior: NoncoopBehavior,
    memory: &mut BehaviorState,
    t: f64,
    limits: &KinematicLimits,
    rng: &mut impl Rng,
) -> f64 {
    let cruise = if state.velocity < limits.v_max { limits.a_acc } else { 0.0 };
    let (start, duration) = match behavior {
        NoncoopBehavior::ConstantSpeed => return cruise,
        NoncoopBehavior::BrakingPulse { start, duration } | NoncoopBehavior::RandomBounded { start, duration } => {
            (start, duration)
        }
    };
    if memory.window_start.is_none() && state.position >= start {
        memory.window_start = Some(t);
    }
    match memory.window_start {
        None => cruise,
        Some(t0) if t < t0 + duration => match behavior {
            NoncoopBehavior::BrakingPulse { .. } => -limits.a_dec,
            _ => rng.gen_range(-limits.a_dec..=limits.a_acc),
        },
        Some(_) => limits.a_acc,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub seed: u64,
    /// Road extents after jitter.
    pub geometry: RoadGeometry,
    /// Same-road spacing l + delta after jitter.
    pub sep: f64,
    pub epoch_times: Vec<f64>,
    pub vehicles: Vec<Vehicle>,
    pub behaviors: BTreeMap<VehicleId, NoncoopBehavior>,
}

impl Scenario {
    /// Scenario with explicit vehicles and no jitter.
    pub fn from_vehicles(
        config: ScenarioConfig,
        seed: u64,
        mut vehicles: Vec<Vehicle>,
        behaviors: BTreeMap<VehicleId, NoncoopBehavior>,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        vehicles.sort_by(|a, b| a.spawn_time.total_cmp(&b.spawn_time).then(a.id.cmp(&b.id)));
        let last_spawn = vehicles.last().map_or(0.0, |v| v.spawn_time);
        let end = run_span(&config, last_spawn);
        let epoch_times = (0..)
            .map(|k| k as f64 * config.epoch_gap)
            .take_while(|t| *t <= end)
            .collect();
        Ok(Self {
            geometry: config.geometry(),
            sep: config.l + config.delta,
            config,
            seed,
            epoch_times,
            vehicles,
            behaviors,
        })
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&Vehicle> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    pub fn coop_count(&self) -> usize {
        self.vehicles.iter().filter(|v| v.cooperative).count()
    }

    pub fn noncoop_count(&self) -> usize {
        self.vehicles.len() - self.coop_count()
    }
}

/// Latest time the simulation may need: the last spawn plus a generous slow traversal.
pub fn run_span(config: &ScenarioConfig, last_spawn: f64) -> f64 {
    let travel = (config.a_range + config.b_range) / (config.v_max - config.v_r);
    config.horizon.max(last_spawn) + travel + 300.0
}

fn jitter(x: f64, rng: &mut ChaCha8Rng) -> f64 {
    x * (1.0 + JITTER * rng.gen_range(-1.0..=1.0))
}

pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario, ConfigError> {
    config.validate()?;
    let stream = |k: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k);
        rng
    };
    let mut arrivals_rng = stream(1);
    let mut noncoop_rng = stream(2);
    let mut jitter_rng = stream(3);
    let mut road_rng = stream(4);
    let mut behavior_rng = stream(5);

    let mut arrivals: Vec<(f64, bool)> = Vec::new();
    if config.lambda_coop > 0.0 {
        let exp = Exp::new(config.lambda_coop).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut t = 0.0;
        loop {
            t += exp.sample(&mut arrivals_rng);
            if t >= config.horizon {
                break;
            }
            arrivals.push((t, true));
        }
    }
    if config.lambda_noncoop > 0.0 {
        let gap = 1.0 / config.lambda_noncoop;
        let mut t = noncoop_rng.gen_range(0.0..gap);
        while t < config.horizon {
            arrivals.push((t, false));
            t += gap;
        }
    }
    arrivals.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));

    let geometry = RoadGeometry::new(config.d.iter().map(|d| jitter(*d, &mut jitter_rng)).collect())
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let sep = jitter(config.l + config.delta, &mut jitter_rng);
    let limits = config.limits();
    let spawn_nominal = -config.a_range - config.b_range;

    let mut vehicles: Vec<Vehicle> = Vec::with_capacity(arrivals.len());
    let mut behaviors = BTreeMap::new();
    let mut last_on_road: Vec<Option<usize>> = vec![None; config.roads];
    for (k, &(t, cooperative)) in arrivals.iter().enumerate() {
        let id = k as VehicleId + 1;
        let road = road_rng.gen_range(0..config.roads);
        let mut position = jitter(spawn_nominal, &mut jitter_rng);
        if let Some(prev) = last_on_road[road].map(|i| &vehicles[i]) {
            let prev_now = prev.spawn_position + limits.v_max * (t - prev.spawn_time);
            if prev_now - position < sep {
                position = prev_now - sep;
            }
        }
        vehicles.push(Vehicle { id, road, cooperative, limits, spawn_time: t, spawn_position: position });
        last_on_road[road] = Some(vehicles.len() - 1);
        if !cooperative {
            behaviors.insert(id, NoncoopBehavior::from_kind(config.noncoop_behavior, &mut behavior_rng));
        }
    }

    let last_spawn = vehicles.last().map_or(0.0, |v| v.spawn_time);
    let end = run_span(config, last_spawn);
    let mut epoch_times = vec![0.0];
    while *epoch_times.last().unwrap() < end {
        let next = epoch_times.last().unwrap() + jitter(config.epoch_gap, &mut jitter_rng);
        epoch_times.push(next);
    }

    Ok(Scenario { config: config.clone(), seed, geometry, sep, epoch_times, vehicles, behaviors })
}

/// Random source for the per-tick draws of one non-cooperative vehicle.
pub fn behavior_rng(seed: u64, id: VehicleId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1_000 + id as u64);
    rng
}

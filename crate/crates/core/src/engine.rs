//! Event-driven simulation: shared long-horizon epochs, per-vehicle short-horizon decisions,
//! delayed observations and the final safety audit.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kinematics::{RoadGeometry, Segment, Trajectory, Vehicle, VehicleId, VehicleState, EPS};
use crate::long_horizon::{
    collect_info, long_horizon_step, solve_order_opt, CoopPosition, EpochSnapshot, LongHorizonParams, RoadOrder,
};
use crate::safety::{audit, follow_clearance, separation_met, AuditEntry, Violation};
use crate::short_horizon::{
    algorithm2_step, baseline_minimax_step, Adversary, Branch, CostReference, Ego, Knowledge, Observation, Predecessor,
    Relation, ShortHorizonParams,
};
use crate::traffic::{behavior_rng, noncoop_policy_step, run_span, BehaviorState, NoncoopBehavior, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    TwoStage,
    BaselineMinimax,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::TwoStage => "two_stage",
            Policy::BaselineMinimax => "baseline",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "two_stage" => Ok(Policy::TwoStage),
            "baseline" | "baseline_minimax" => Ok(Policy::BaselineMinimax),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionRecord {
    pub time: f64,
    pub vehicle: VehicleId,
    pub branch: Branch,
    pub accel: f64,
    pub target: VehicleState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub time: f64,
    pub position: f64,
    pub displacement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRecord {
    pub vehicle: Vehicle,
    pub log: Trajectory,
    pub handoff_time: Option<f64>,
    /// Time the rear leaves the zone.
    pub clearance_time: Option<f64>,
    pub predecessor: Option<VehicleId>,
    /// Whether the long-horizon separation to the predecessor held at handoff.
    pub separated_at_handoff: Option<bool>,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub policy: Policy,
    pub seed: u64,
    pub end_time: f64,
    pub geometry: RoadGeometry,
    pub vehicles: Vec<VehicleRecord>,
    pub decisions: Vec<DecisionRecord>,
    pub violations: Vec<Violation>,
}

impl SimResult {
    pub fn vehicle(&self, id: VehicleId) -> Option<&VehicleRecord> {
        self.vehicles.iter().find(|r| r.vehicle.id == id)
    }

    pub fn cooperative_violations(&self) -> usize {
        self.violations.iter().filter(|v| v.involves_cooperative).count()
    }
}

/// States of all spawned vehicles at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub states: BTreeMap<VehicleId, VehicleState>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stage {
    Pending,
    Long,
    Short { t0: f64 },
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Spawn,
    Epoch,
    Handoff,
    Decision,
    NoncoopTick,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    kind: Kind,
    /// Vehicle index, or epoch index.
    index: usize,
    /// Tie-break among simultaneous events of one kind.
    rank: usize,
    /// Decision counter, or the version that scheduled a handoff.
    tag: u64,
    seq: u64,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so that the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.kind.cmp(&self.kind))
            .then(other.rank.cmp(&self.rank))
            .then(other.seq.cmp(&self.seq))
    }
}

struct Agent {
    vehicle: Vehicle,
    log: Trajectory,
    stage: Stage,
    zone_end: f64,
    version: u64,
    handoff_time: Option<f64>,
    handoff_rank: Option<usize>,
    clearance_time: Option<f64>,
    predecessor: Option<usize>,
    separated_at_handoff: Option<bool>,
    epochs: Vec<EpochRecord>,
    behavior: Option<NoncoopBehavior>,
    memory: BehaviorState,
    rng: Option<ChaCha8Rng>,
    /// Draws the delays of this vehicle's observations.
    obs_rng: ChaCha8Rng,
}

/// The simulated world; advance it with [`World::run`].
pub struct World<'a> {
    scenario: &'a Scenario,
    policy: Policy,
    agents: Vec<Agent>,
    queue: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    end: f64,
    last_handoff: Option<usize>,
    handoffs: usize,
    long: LongHorizonParams,
    short: ShortHorizonParams,
    descending: bool,
    last_stamp: BTreeMap<(usize, usize), f64>,
    decisions: Vec<DecisionRecord>,
}

impl<'a> World<'a> {
    pub fn new(scenario: &'a Scenario, policy: Policy) -> Self {
        Self::build(scenario, policy, false)
    }

    /// Like [`World::new`], but vehicles acting at the same instant are processed in descending
    /// id order. Results are identical up to the order of the decision records.
    pub fn with_descending_ties(scenario: &'a Scenario, policy: Policy) -> Self {
        Self::build(scenario, policy, true)
    }

    fn build(scenario: &'a Scenario, policy: Policy, descending: bool) -> Self {
        let cfg = &scenario.config;
        let geometry = &scenario.geometry;
        let agents: Vec<Agent> = scenario
            .vehicles
            .iter()
            .map(|v| Agent {
                vehicle: v.clone(),
                log: Trajectory::new(v.spawn_time, v.spawn_state(), v.limits),
                stage: Stage::Pending,
                zone_end: v.limits.length + geometry.extent(v.road),
                version: 0,
                handoff_time: None,
                handoff_rank: None,
                clearance_time: None,
                predecessor: None,
                separated_at_handoff: None,
                epochs: Vec::new(),
                behavior: scenario.behaviors.get(&v.id).copied(),
                memory: BehaviorState::default(),
                rng: (!v.cooperative).then(|| behavior_rng(scenario.seed, v.id)),
                obs_rng: observation_rng(scenario.seed, v.id),
            })
            .collect();
        let last_spawn = scenario.vehicles.iter().map(|v| v.spawn_time).fold(0.0, f64::max);
        let mut world = Self {
            scenario,
            policy,
            agents,
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            end: run_span(cfg, last_spawn),
            last_handoff: None,
            handoffs: 0,
            long: LongHorizonParams {
                range: cfg.a_range,
                window: cfg.window,
                delta: cfg.delta,
                v_reduction: cfg.v_r,
                sep: scenario.sep,
            },
            short: ShortHorizonParams {
                range: cfg.b_range,
                decision_gap: cfg.tick_gap,
                tau: cfg.tau,
                ..ShortHorizonParams::default()
            },
            descending,
            last_stamp: BTreeMap::new(),
            decisions: Vec::new(),
        };
        for i in 0..world.agents.len() {
            let t = world.agents[i].vehicle.spawn_time;
            world.push(t, Kind::Spawn, i, 0);
        }
        if world.agents.iter().any(|a| a.vehicle.cooperative) {
            for (k, &t) in scenario.epoch_times.iter().enumerate() {
                world.push(t, Kind::Epoch, k, 0);
            }
        }
        world
    }

    fn push(&mut self, time: f64, kind: Kind, index: usize, tag: u64) {
        self.seq += 1;
        let rank = if self.descending { usize::MAX - index } else { index };
        self.queue.push(Event { time, kind, index, rank, tag, seq: self.seq });
    }

    pub fn time(&self) -> f64 {
        self.now
    }

    /// States of every spawned vehicle at `t`; decisions at `t` only read these values.
    pub fn snapshot(&self, t: f64) -> Snapshot {
        let states = self
            .agents
            .iter()
            .filter(|a| a.stage != Stage::Pending && a.vehicle.spawn_time <= t)
            .map(|a| (a.vehicle.id, a.log.state_at(t)))
            .collect();
        Snapshot { time: t, states }
    }

    pub fn run(mut self) -> SimResult {
        while let Some(ev) = self.queue.pop() {
            if ev.time > self.end {
                break;
            }
            self.now = ev.time;
            match ev.kind {
                Kind::Spawn => self.on_spawn(ev.index),
                Kind::Epoch => self.on_epoch(ev.index),
                Kind::Handoff => {
                    if ev.tag == self.agents[ev.index].version && self.agents[ev.index].stage == Stage::Long {
                        self.on_handoff(ev.index);
                    }
                }
                Kind::Decision => self.on_decision(ev.index, ev.tag),
                Kind::NoncoopTick => self.on_tick(ev.index),
            }
        }
        self.finish()
    }

    fn cleared_by(&self, i: usize, t: f64) -> bool {
        self.agents[i].clearance_time.is_some_and(|c| c <= t)
    }

    fn schedule_handoff(&mut self, i: usize) {
        let b = self.scenario.config.b_range;
        let a = &mut self.agents[i];
        a.version += 1;
        let version = a.version;
        if let Some(t) = a.log.reach_time(-b) {
            self.push(t.max(self.now), Kind::Handoff, i, version);
        }
    }

    fn on_spawn(&mut self, i: usize) {
        let t = self.now;
        let a = &mut self.agents[i];
        if a.vehicle.cooperative {
            a.stage = Stage::Long;
            a.log.push_segment(Segment { duration: f64::INFINITY, accel: 0.0 }).expect("fresh log");
            self.schedule_handoff(i);
        } else {
            a.stage = Stage::Free;
            match a.behavior {
                Some(NoncoopBehavior::ConstantSpeed) | None => {
                    a.log.push_segment(Segment { duration: f64::INFINITY, accel: 0.0 }).expect("fresh log");
                    a.clearance_time = a.log.reach_time(a.zone_end);
                }
                Some(_) => self.push(t, Kind::NoncoopTick, i, 0),
            }
        }
    }

    fn on_tick(&mut self, i: usize) {
        let t = self.now;
        let tick = self.scenario.config.tick_gap;
        let a = &mut self.agents[i];
        let limits = a.vehicle.limits;
        let state = a.log.state_at(t);
        a.log.truncate(t);
        if state.position >= a.zone_end {
            a.log.push_segment(Segment { duration: f64::INFINITY, accel: limits.a_acc }).expect("bounded log");
            a.clearance_time = a.log.reach_time(a.zone_end);
            return;
        }
        let behavior = a.behavior.expect("ticking vehicles have a behavior");
        let rng = a.rng.as_mut().expect("non-cooperative vehicles carry a generator");
        let accel = noncoop_policy_step(state, behavior, &mut a.memory, t, &limits, rng);
        a.log.push_segment(Segment { duration: tick, accel }).expect("behaviors stay within limits");
        self.push(t + tick, Kind::NoncoopTick, i, 0);
    }

    fn on_epoch(&mut self, k: usize) {
        let t = self.now;
        let Some(&next) = self.scenario.epoch_times.get(k + 1) else {
            return;
        };
        let gap = next - t;
        let b = self.scenario.config.b_range;
        let geometry = &self.scenario.geometry;
        let coop: Vec<usize> = (0..self.agents.len())
            .filter(|&i| {
                let a = &self.agents[i];
                a.vehicle.cooperative && a.stage != Stage::Pending && !self.cleared_by(i, t)
            })
            .collect();
        let participants: Vec<usize> = coop
            .iter()
            .copied()
            .filter(|&i| self.agents[i].stage == Stage::Long && self.agents[i].log.position_at(t) < -b)
            .collect();
        if participants.is_empty() {
            return;
        }
        let snapshot = EpochSnapshot {
            time: t,
            vehicles: coop
                .iter()
                .map(|&i| {
                    let a = &self.agents[i];
                    CoopPosition {
                        id: a.vehicle.id,
                        road: a.vehicle.road,
                        position: a.log.position_at(t),
                        order_key: a.vehicle.initial_position(),
                    }
                })
                .collect(),
        };
        let order = RoadOrder::new(&snapshot, geometry.road_count());
        let mut plans = Vec::with_capacity(participants.len());
        for &i in &participants {
            let a = &self.agents[i];
            let info = collect_info(a.vehicle.id, &order, &self.long, geometry);
            let p_star = solve_order_opt(&info, self.long.sep, geometry)[&a.vehicle.id];
            let p_now = a.log.position_at(t);
            let segments = match long_horizon_step(p_now, p_star, &self.long, &a.vehicle.limits, gap) {
                Ok(plan) => plan.segments,
                Err(_) => vec![Segment { duration: gap, accel: 0.0 }],
            };
            plans.push((i, p_now, segments));
        }
        for (i, p_now, segments) in plans {
            let a = &mut self.agents[i];
            a.log.truncate(t);
            for s in segments {
                a.log.push_segment(s).expect("epoch profile is within limits");
            }
            a.log.push_segment(Segment { duration: f64::INFINITY, accel: 0.0 }).expect("bounded log");
            let displacement = a.log.position_at(next) - p_now;
            a.epochs.push(EpochRecord { time: t, position: p_now, displacement });
            self.schedule_handoff(i);
        }
    }

    fn on_handoff(&mut self, i: usize) {
        let t = self.now;
        let geometry = &self.scenario.geometry;
        let cfg = &self.scenario.config;
        self.agents[i].log.truncate(t);
        let separated = self.last_handoff.map(|j| {
            let (a, b) = (&self.agents[i], &self.agents[j]);
            separation_met(
                a.log.position_at(t),
                b.log.position_at(t),
                a.vehicle.road,
                b.vehicle.road,
                cfg.l,
                cfg.delta,
                geometry,
            )
        });
        let a = &mut self.agents[i];
        a.stage = Stage::Short { t0: t };
        a.handoff_time = Some(t);
        a.handoff_rank = Some(self.handoffs);
        a.predecessor = self.last_handoff;
        a.separated_at_handoff = separated;
        self.last_handoff = Some(i);
        self.handoffs += 1;
        self.push(t, Kind::Decision, i, 0);
    }

    fn observe(&mut self, observer: usize, subject: usize, t: f64) -> Observation {
        let cooperative = self.agents[subject].vehicle.cooperative;
        let bound = if cooperative { self.scenario.config.tau } else { self.scenario.config.noncoop_obs_delay };
        let delay = if bound > 0.0 { self.agents[observer].obs_rng.gen_range(0.0..=bound) } else { 0.0 };
        let key = (observer, subject);
        let mut stamp = (t - delay).max(self.agents[subject].vehicle.spawn_time);
        if let Some(&prev) = self.last_stamp.get(&key) {
            stamp = stamp.max(prev);
        }
        self.last_stamp.insert(key, stamp);
        let s = &self.agents[subject];
        Observation { subject: s.vehicle.id, state: s.log.state_at(stamp), stamp }
    }

    fn relation(&self, ego: usize, other: usize, obs: &Observation) -> Relation {
        let (e, o) = (&self.agents[ego], &self.agents[other]);
        if e.vehicle.road != o.vehicle.road {
            return Relation::CrossRoad;
        }
        let mine = e.log.position_at(obs.stamp);
        let ahead = match obs.state.position.total_cmp(&mine) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => (o.vehicle.spawn_time, o.vehicle.id) < (e.vehicle.spawn_time, e.vehicle.id),
        };
        if ahead {
            Relation::Leading
        } else {
            Relation::Trailing
        }
    }

    fn adversary(&mut self, ego: usize, other: usize, t: f64) -> Adversary {
        let obs = self.observe(ego, other, t);
        let relation = self.relation(ego, other, &obs);
        let o = &self.agents[other];
        Adversary { obs, limits: o.vehicle.limits, zone_end: o.zone_end, relation }
    }

    /// Uncertain vehicles for the ego: every non-cooperative one, and under the baseline also every
    /// cooperative one that reached the short horizon earlier. Later arrivals treat the ego as
    /// uncertain themselves, which keeps each pair safe and lets the earliest waiting vehicle go.
    fn knowledge(&mut self, i: usize, t: f64) -> Knowledge {
        let rank = self.agents[i].handoff_rank;
        let others: Vec<usize> = (0..self.agents.len())
            .filter(|&j| {
                let o = &self.agents[j];
                let uncertain = !o.vehicle.cooperative
                    || (self.policy == Policy::BaselineMinimax && o.handoff_rank.is_some() && o.handoff_rank < rank);
                j != i && uncertain && o.stage != Stage::Pending && !self.cleared_by(j, t)
            })
            .collect();
        let adversaries = others.into_iter().map(|j| self.adversary(i, j, t)).collect();
        let predecessor = match self.policy {
            Policy::BaselineMinimax => None,
            Policy::TwoStage => self.agents[i].predecessor.filter(|&j| !self.cleared_by(j, t)).map(|j| {
                let obs = self.observe(i, j, t);
                let geometry = &self.scenario.geometry;
                let clearance = follow_clearance(
                    self.agents[j].vehicle.limits.length,
                    self.agents[j].vehicle.road,
                    self.agents[i].vehicle.road,
                    geometry,
                );
                Predecessor { obs, clearance }
            }),
        };
        Knowledge { predecessor, adversaries }
    }

    fn on_decision(&mut self, i: usize, k: u64) {
        let Stage::Short { t0 } = self.agents[i].stage else {
            return;
        };
        let tick = self.scenario.config.tick_gap;
        let t_k = t0 + k as f64 * tick;
        let t1 = t0 + (k + 1) as f64 * tick;
        let a = &self.agents[i];
        let limits = a.vehicle.limits;
        let state = a.log.state_at(t_k);
        let ego = Ego {
            id: a.vehicle.id,
            limits,
            zone_end: a.zone_end,
            cost: CostReference { spawn_time: a.vehicle.spawn_time, spawn_position: a.vehicle.spawn_position, limits },
            state,
        };
        let decision = if self.policy == Policy::BaselineMinimax && state.position > EPS {
            None
        } else {
            let knowledge = self.knowledge(i, t_k);
            Some(match self.policy {
                Policy::TwoStage => algorithm2_step(&ego, &knowledge, &self.short, t_k, t1),
                Policy::BaselineMinimax => baseline_minimax_step(&ego, &knowledge, &self.short, t_k, t1),
            })
        };
        if let Some(d) = decision {
            self.decisions.push(DecisionRecord { time: t_k, vehicle: ego.id, branch: d.branch, accel: d.accel, target: d.target });
        }
        let a = &mut self.agents[i];
        a.log.truncate(t_k);
        match decision {
            Some(d) if !d.hold => {
                a.log.push_segment(Segment { duration: t1 - t_k, accel: d.accel }).expect("candidates are within limits");
                self.push(t1, Kind::Decision, i, k + 1);
            }
            _ => {
                a.log.push_segment(Segment { duration: f64::INFINITY, accel: limits.a_acc }).expect("bounded log");
                a.stage = Stage::Free;
                a.clearance_time = a.log.reach_time(a.zone_end);
            }
        }
    }

    fn finish(self) -> SimResult {
        let geometry = self.scenario.geometry.clone();
        let end = self.end;
        let entries: Vec<AuditEntry<'_>> = self
            .agents
            .iter()
            .filter(|a| a.stage != Stage::Pending)
            .map(|a| AuditEntry {
                id: a.vehicle.id,
                road: a.vehicle.road,
                cooperative: a.vehicle.cooperative,
                length: a.vehicle.limits.length,
                trajectory: &a.log,
            })
            .collect();
        let violations = audit(&entries, &geometry, end);
        let ids: Vec<VehicleId> = self.agents.iter().map(|a| a.vehicle.id).collect();
        let vehicles = self
            .agents
            .into_iter()
            .map(|a| VehicleRecord {
                predecessor: a.predecessor.map(|j| ids[j]),
                vehicle: a.vehicle,
                log: a.log,
                handoff_time: a.handoff_time,
                clearance_time: a.clearance_time.filter(|t| *t <= end),
                separated_at_handoff: a.separated_at_handoff,
                epochs: a.epochs,
            })
            .collect();
        SimResult {
            policy: self.policy,
            seed: self.scenario.seed,
            end_time: end,
            geometry,
            vehicles,
            decisions: self.decisions,
            violations,
        }
    }
}

fn observation_rng(seed: u64, id: VehicleId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(100_000 + id as u64);
    rng
}

pub fn run(scenario: &Scenario, policy: Policy) -> SimResult {
    World::new(scenario, policy).run()
}

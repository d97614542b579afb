//! Randomized property suites: order-program oracle, convergence, safety, no-slowdown and
//! numerical cross-checks of the analytic building blocks.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{BehaviorKind, ScenarioConfig};
use crate::engine::{run, Policy, SimResult};
use crate::kinematics::{KinematicLimits, RoadGeometry, Segment, Trajectory, Vehicle, VehicleId, VehicleState, EPS};
use crate::long_horizon::{lemma1_closed_form, solve_order_opt, CollectedInfo, Member};
use crate::metrics::relative_cost;
use crate::safety::{cross_road_conflict, occupancy_window};
use crate::short_horizon::{f_fol_member, Observation};
use crate::traffic::{generate_scenario, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Lemma1,
    Thm1,
    Thm2,
    Thm3,
    Oracles,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Lemma1, Suite::Thm1, Suite::Thm2, Suite::Thm3, Suite::Oracles];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Lemma1 => "lemma1",
            Suite::Thm1 => "thm1",
            Suite::Thm2 => "thm2",
            Suite::Thm3 => "thm3",
            Suite::Oracles => "oracles",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown suite `{s}` (expected lemma1, thm1, thm2, thm3 or oracles)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub instance: usize,
    pub detail: String,
    /// Serialized input reproducing the failure.
    pub input: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checked: usize,
    pub failures: Vec<Failure>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn suite_rng(seed: u64, suite: Suite) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(100 + suite as u64);
    rng
}

pub fn run_suite(suite: Suite, seed: u64, n: usize) -> SuiteReport {
    let mut rng = suite_rng(seed, suite);
    let mut failures = Vec::new();
    for k in 0..n {
        let outcome = match suite {
            Suite::Lemma1 => check_lemma1(&mut rng),
            Suite::Thm1 => check_thm1(&mut rng),
            Suite::Thm2 => check_thm2(&mut rng),
            Suite::Thm3 => check_thm3(&mut rng),
            Suite::Oracles => check_oracles(&mut rng),
        };
        if let Err((detail, input)) = outcome {
            failures.push(Failure { instance: k, detail, input });
        }
    }
    SuiteReport { suite, checked: n, failures }
}

type Outcome = Result<(), (String, String)>;

/// Same-road spacing used by the instance generators: l + delta*.
fn paper_sep() -> f64 {
    let c = ScenarioConfig::default();
    c.l + c.delta_star()
}

fn required_gap(front_road: usize, back_road: usize, sep: f64, geometry: &RoadGeometry) -> f64 {
    if front_road == back_road {
        sep
    } else {
        sep + geometry.extent(front_road)
    }
}

/// Instance for the closed-form check: the non-ego members are mutually separated and all ahead of the ego.
pub fn lemma1_instance(rng: &mut impl Rng) -> (CollectedInfo, f64, RoadGeometry) {
    let roads = rng.gen_range(2..=3);
    let window = rng.gen_range(2..=6);
    let geometry = RoadGeometry::uniform(roads, 5.0).expect("positive extent");
    let sep = paper_sep();
    let mut placed: Vec<(usize, f64)> = Vec::new();
    let mut p = rng.gen_range(-700.0..-300.0);
    for k in 0..window - 1 {
        let road = rng.gen_range(0..roads);
        if k > 0 {
            let front = placed[k - 1].0;
            p -= required_gap(front, road, sep, &geometry) + rng.gen_range(0.0..25.0);
        }
        placed.push((road, p));
    }
    let ego_road = rng.gen_range(0..roads);
    let ego_p = p - rng.gen_range(1e-3..40.0);
    placed.push((ego_road, ego_p));
    let mut rank_on_road = vec![0usize; roads];
    let members = placed
        .iter()
        .enumerate()
        .map(|(k, &(road, p))| {
            let rank = rank_on_road[road];
            rank_on_road[road] += 1;
            Member { id: k as u32 + 1, road, rank, live: p, eq_pos: p }
        })
        .collect();
    (CollectedInfo { ego: window as u32, members }, sep, geometry)
}

fn check_lemma1(rng: &mut impl Rng) -> Outcome {
    let (info, sep, geometry) = lemma1_instance(rng);
    let input = format!("{info:?} sep={sep:?} extents={:?}", geometry.extents());
    let exact = solve_order_opt(&info, sep, &geometry)[&info.ego];
    let closed = lemma1_closed_form(&info, sep, &geometry).map_err(|e| (e.to_string(), input.clone()))?;
    if (exact - closed).abs() > 1e-9 {
        return Err((format!("program optimum {exact} differs from closed form {closed}"), input));
    }
    Ok(())
}

/// Random fully cooperative fleet of at most 20 vehicles with a long self-organization range.
pub fn thm1_scenario(rng: &mut impl Rng) -> Scenario {
    let config = ScenarioConfig {
        a_range: 1200.0,
        lambda_coop: rng.gen_range(0.1..0.3),
        lambda_noncoop: 0.0,
        horizon: 60.0,
        ..ScenarioConfig::default()
    };
    let mut s = generate_scenario(&config, rng.gen()).expect("valid configuration");
    s.vehicles.truncate(20);
    s
}

fn scenario_input(s: &Scenario) -> String {
    let mut out = s.config.serialize();
    out.push_str(&format!("# seed {}\n", s.seed));
    for v in &s.vehicles {
        out.push_str(&format!(
            "# vehicle {} road {} cooperative {} spawn {:?} at {:?}\n",
            v.id, v.road, v.cooperative, v.spawn_time, v.spawn_position
        ));
    }
    out
}

/// Worst long-horizon separation slack at `t` between `subject` and every other cooperative vehicle present.
pub fn separation_slack(result: &SimResult, scenario: &Scenario, subject: VehicleId, t: f64) -> f64 {
    let Some(me) = result.vehicle(subject) else {
        return f64::INFINITY;
    };
    let pm = me.log.position_at(t);
    result
        .vehicles
        .iter()
        .filter(|r| r.vehicle.id != subject && r.vehicle.cooperative && r.vehicle.spawn_time <= t)
        .filter(|r| r.clearance_time.map_or(true, |c| c > t))
        .map(|r| {
            let p = r.log.position_at(t);
            let (front, back, gap) = if pm >= p { (me, r, pm - p) } else { (r, me, p - pm) };
            gap - required_gap(front.vehicle.road, back.vehicle.road, scenario.sep, &scenario.geometry)
        })
        .fold(f64::INFINITY, f64::min)
}

fn check_thm1(rng: &mut impl Rng) -> Outcome {
    let scenario = thm1_scenario(rng);
    let input = scenario_input(&scenario);
    let result = run(&scenario, Policy::TwoStage);
    let v_max = scenario.config.v_max;
    for r in result.vehicles.iter() {
        let Some(t) = r.handoff_time else {
            return Err((format!("vehicle {} never reached the short horizon", r.vehicle.id), input));
        };
        let slack = separation_slack(&result, &scenario, r.vehicle.id, t);
        if slack < -1e-6 {
            return Err((format!("separation slack {slack} when vehicle {} hands off", r.vehicle.id), input));
        }
        if let Some(last) = r.epochs.last() {
            let k = scenario.epoch_times.partition_point(|e| *e < last.time - EPS);
            let gap = scenario.epoch_times[k + 1] - scenario.epoch_times[k];
            if (last.displacement - v_max * gap).abs() > 1e-6 {
                return Err((format!("vehicle {} last displacement {}", r.vehicle.id, last.displacement), input));
            }
        }
    }
    Ok(())
}

pub fn thm2_config(rng: &mut impl Rng, instance: usize) -> ScenarioConfig {
    let kinds = [BehaviorKind::ConstantSpeed, BehaviorKind::BrakingPulse, BehaviorKind::RandomBounded, BehaviorKind::Mixed];
    ScenarioConfig {
        a_range: [0.0, 200.0, 600.0][rng.gen_range(0..3)],
        b_range: 200.0,
        lambda_coop: rng.gen_range(0.4..=1.2),
        lambda_noncoop: rng.gen_range(0.0..=0.3),
        noncoop_behavior: kinds[instance % kinds.len()],
        horizon: 60.0,
        seed: rng.gen(),
        ..ScenarioConfig::default()
    }
}

fn check_thm2(rng: &mut impl Rng) -> Outcome {
    let instance = rng.gen_range(0..4);
    let config = thm2_config(rng, instance);
    let scenario = generate_scenario(&config, config.seed).expect("valid configuration");
    let result = run(&scenario, Policy::TwoStage);
    match result.cooperative_violations() {
        0 => Ok(()),
        n => Err((format!("{n} violations involve cooperative vehicles"), scenario_input(&scenario))),
    }
}

/// Fully cooperative arrivals at the start of the short horizon, spaced by the design spacing plus slack.
pub fn thm3_scenario(rng: &mut impl Rng) -> Scenario {
    let config = ScenarioConfig { a_range: 0.0, lambda_coop: 0.0, lambda_noncoop: 0.0, ..ScenarioConfig::default() };
    let limits = config.limits();
    let geometry = config.geometry();
    let count = rng.gen_range(2..=12);
    let mut vehicles = Vec::with_capacity(count);
    let mut t = 0.0;
    let mut prev_road: Option<usize> = None;
    for k in 0..count {
        let road = rng.gen_range(0..config.roads);
        if let Some(front) = prev_road {
            let need = config.l + config.delta_star() + if front != road { geometry.extent(front) } else { 0.0 };
            t += need / config.v_max + rng.gen_range(0.01..1.0);
        }
        vehicles.push(Vehicle {
            id: k as u32 + 1,
            road,
            cooperative: true,
            limits,
            spawn_time: t,
            spawn_position: -config.b_range,
        });
        prev_road = Some(road);
    }
    Scenario::from_vehicles(config, rng.gen(), vehicles, BTreeMap::new()).expect("valid configuration")
}

fn check_thm3(rng: &mut impl Rng) -> Outcome {
    let scenario = thm3_scenario(rng);
    let input = scenario_input(&scenario);
    let result = run(&scenario, Policy::TwoStage);
    let v_max = scenario.config.v_max;
    let b = scenario.config.b_range;
    for r in &result.vehicles {
        let (Some(start), Some(end)) = (r.handoff_time, r.clearance_time) else {
            return Err((format!("vehicle {} did not complete", r.vehicle.id), input));
        };
        let mut t = start;
        while t <= end {
            let s = r.log.state_at(t);
            if s.position >= -b && s.position <= 0.0 && (s.velocity - v_max).abs() > 1e-9 {
                return Err((format!("vehicle {} at {:?} moves at {}", r.vehicle.id, s.position, s.velocity), input));
            }
            t += 0.01;
        }
        let before = relative_cost(&r.vehicle, start, &r.log).expect("within log");
        let after = relative_cost(&r.vehicle, end, &r.log).expect("within log");
        if (after - before).abs() > 1e-6 {
            return Err((format!("vehicle {} cost grew by {}", r.vehicle.id, after - before), input));
        }
    }
    Ok(())
}

/// Exact minimum of `leader - ego` over `[from, to]`: the difference is quadratic between breakpoints.
fn min_gap(leader: &Trajectory, ego: &Trajectory, from: f64, to: f64) -> f64 {
    let mut cuts: Vec<f64> = leader.breakpoints(from, to).chain(ego.breakpoints(from, to)).collect();
    cuts.extend([from, to]);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let gap = |t: f64| leader.position_at(t) - ego.position_at(t);
    let mut worst = gap(from).min(gap(to));
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a < 1e-12 {
            continue;
        }
        let m = 0.5 * (a + b);
        let (ga, gm, gb) = (gap(a), gap(m), gap(b));
        worst = worst.min(ga).min(gb);
        let curvature = ga - 2.0 * gm + gb;
        if curvature > 0.0 {
            let vertex = m + 0.25 * (b - a) * (ga - gb) / curvature;
            if vertex > a && vertex < b {
                worst = worst.min(gap(vertex));
            }
        }
    }
    worst
}

/// Worst follower gap over a 1 ms grid of switching times: both vehicles brake fully until the
/// switch and then accelerate fully. The gap is minimized exactly in time for each switch.
pub fn dense_follow_margin(
    candidate: VehicleState,
    t1: f64,
    pred: &Observation,
    clearance: f64,
    limits: &KinematicLimits,
    dt: f64,
) -> f64 {
    let switch_path = |start_time: f64, state: VehicleState, switch: f64| {
        let mut tr = Trajectory::new(start_time, state, *limits);
        tr.push_segment(Segment { duration: (switch - start_time).max(0.0), accel: -limits.a_dec })
            .expect("braking is within limits");
        tr.push_segment(Segment { duration: f64::INFINITY, accel: limits.a_acc }).expect("bounded prefix");
        tr
    };
    let stop_leader = pred.stamp + pred.state.velocity / limits.a_dec;
    let stop_ego = t1 + candidate.velocity / limits.a_dec;
    let last = stop_leader.max(stop_ego).max(t1) + 1.0;
    let mut switches: Vec<f64> = (0..).map(|k| t1 + k as f64 * dt).take_while(|s| *s <= last).collect();
    switches.extend([stop_leader, stop_ego].into_iter().filter(|s| *s >= t1));
    switches
        .into_iter()
        .map(|s| {
            let leader = switch_path(pred.stamp, pred.state, s.max(pred.stamp));
            let ego = switch_path(t1, candidate, s);
            let settle = s + limits.v_max / limits.a_acc + 1.0;
            min_gap(&leader, &ego, t1, settle) - clearance
        })
        .fold(f64::INFINITY, f64::min)
}

/// Random follower pair: candidate state at `t1`, a predecessor observation, and the clearance.
pub fn follow_pair(rng: &mut impl Rng) -> (VehicleState, f64, Observation, f64) {
    let t1 = 10.0;
    let v = rng.gen_range(0.0..=20.0);
    let envelope = v * v / 8.0;
    let p = -envelope - rng.gen_range(-2.0..150.0);
    let u = rng.gen_range(0.0..=20.0);
    let stamp = t1 - rng.gen_range(0.0..=0.2);
    let clearance = if rng.gen_bool(0.5) { 5.0 } else { 10.0 };
    let gap = clearance + rng.gen_range(-3.0..40.0);
    let obs = Observation { subject: 0, state: VehicleState::new(p + gap, u), stamp };
    (VehicleState::new(p, v), t1, obs, clearance)
}

fn check_oracles(rng: &mut impl Rng) -> Outcome {
    let limits = ScenarioConfig::default().limits();
    let (candidate, t1, obs, clearance) = follow_pair(rng);
    let dense = dense_follow_margin(candidate, t1, &obs, clearance, &limits, 1e-3);
    let member = f_fol_member(candidate, t1, Some((&obs, clearance)), &limits, 64);
    let expect = limits.stop_envelope(candidate) <= EPS && dense >= 0.0;
    if member != expect && dense.abs() > 1e-6 {
        return Err((
            format!("membership {member} but dense margin {dense}"),
            format!("candidate={candidate:?} t1={t1} obs={obs:?} clearance={clearance}"),
        ));
    }
    check_integration(rng)?;
    check_window_conflict(rng)
}

fn random_segments(rng: &mut impl Rng, limits: &KinematicLimits) -> Vec<Segment> {
    (0..rng.gen_range(1..6))
        .map(|_| Segment { duration: rng.gen_range(0.0..3.0), accel: rng.gen_range(-limits.a_dec..=limits.a_acc) })
        .collect()
}

/// Closed-form evaluation against explicit small-step integration with velocity saturation.
fn check_integration(rng: &mut impl Rng) -> Outcome {
    let limits = ScenarioConfig::default().limits();
    let start = VehicleState::new(rng.gen_range(-300.0..0.0), rng.gen_range(0.0..=20.0));
    let segments = random_segments(rng, &limits);
    let tr = Trajectory::with_segments(0.0, start, limits, &segments).expect("segments within limits");
    let dt = 1e-4;
    let (mut p, mut v, mut t) = (start.position, start.velocity, 0.0);
    for seg in &segments {
        let steps = (seg.duration / dt).round() as usize;
        let h = seg.duration / steps.max(1) as f64;
        for _ in 0..steps {
            let next = (v + seg.accel * h).clamp(0.0, limits.v_max);
            p += 0.5 * (v + next) * h;
            v = next;
            t += h;
        }
    }
    let exact = tr.state_at(t);
    if (exact.position - p).abs() > 1e-3 || (exact.velocity - v).abs() > 1e-6 {
        return Err((format!("closed form {exact:?} vs integration ({p}, {v})"), format!("start={start:?} segments={segments:?}")));
    }
    Ok(())
}

fn random_path(rng: &mut impl Rng, limits: &KinematicLimits) -> (Trajectory, VehicleState, Vec<Segment>) {
    let start = VehicleState::new(rng.gen_range(-80.0..-5.0), rng.gen_range(0.0..=20.0));
    let mut segs = random_segments(rng, limits);
    segs.push(Segment { duration: f64::INFINITY, accel: limits.a_acc });
    (Trajectory::with_segments(0.0, start, *limits, &segs).expect("segments within limits"), start, segs)
}

/// Window-based cross-road conflict against a sampled both-inside test.
fn check_window_conflict(rng: &mut impl Rng) -> Outcome {
    let limits = ScenarioConfig::default().limits();
    let extent = 5.0;
    let (a, sa, ga) = random_path(rng, &limits);
    let (b, sb, gb) = random_path(rng, &limits);
    let horizon = 60.0;
    let analytic = cross_road_conflict(&a, &b, 0, 1, extent, extent, limits.length, limits.length, horizon).expect("different roads");
    let inside = |tr: &Trajectory, t: f64| {
        let p = tr.position_at(t);
        p > 0.0 && p < limits.length + extent
    };
    let dt = 1e-3;
    let mut sampled = false;
    let mut t = 0.0;
    while t < horizon {
        if inside(&a, t) && inside(&b, t) {
            sampled = true;
            break;
        }
        t += dt;
    }
    if analytic != sampled {
        // Overlaps shorter than the sampling step are invisible to the sampler.
        let short = match (
            occupancy_window(&a, limits.length, extent, horizon),
            occupancy_window(&b, limits.length, extent, horizon),
        ) {
            (Some(wa), Some(wb)) => (wa.exit.min(wb.exit) - wa.entry.max(wb.entry)).abs() < 2.0 * dt,
            _ => false,
        };
        if !short {
            return Err((
                format!("window test {analytic} vs sampled {sampled}"),
                format!("a: {sa:?} {ga:?}; b: {sb:?} {gb:?}"),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>(), Ok(s));
        }
        assert!("thm4".parse::<Suite>().is_err());
    }

    #[test]
    fn zero_instances_pass() {
        let r = run_suite(Suite::Thm2, 1, 0);
        assert!(r.passed());
        assert_eq!(r.checked, 0);
    }

    #[test]
    fn cheap_suites_pass() {
        for suite in [Suite::Lemma1, Suite::Oracles, Suite::Thm3] {
            let r = run_suite(suite, 3, 10);
            assert!(r.passed(), "{suite}: {:?}", r.failures);
        }
    }
}

//! End-to-end acceptance checks. Each test prints one PASS or FAIL line with its timing.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use isect::config::{BehaviorKind, ScenarioConfig};
use isect::engine::{run, Policy, SimResult};
use isect::harness::{run_once, sweep, verify_to, write_sweep, RunOptions, SweepSpec};
use isect::kinematics::{RoadGeometry, Vehicle, VehicleState};
use isect::long_horizon::{solve_order_opt, CollectedInfo, Member};
use isect::short_horizon::{f_fol_member, Observation};
use isect::traffic::{generate_scenario, Scenario};
use isect::verify::Suite;

fn report(criterion: usize, name: &str, ok: bool, elapsed: Duration, budget: Duration, detail: &str) {
    let within = elapsed <= budget;
    let verdict = if ok && within { "PASS" } else { "FAIL" };
    // Written straight to stderr so the line survives output capture.
    let _ = writeln!(
        std::io::stderr(),
        "criterion {criterion} {verdict}: {name} ({:.1} s of {} s) {detail}",
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    assert!(ok, "criterion {criterion} failed: {detail}");
    assert!(within, "criterion {criterion} exceeded its time budget");
}

fn defaults() -> ScenarioConfig {
    ScenarioConfig::default()
}

fn spacing(c: &ScenarioConfig) -> f64 {
    c.l + c.delta_star()
}

/// Distance lost against a full-speed run from the spawn point, plus the distance needed to
/// regain full speed.
fn cost_at(v: &Vehicle, s: VehicleState, t: f64, c: &ScenarioConfig) -> f64 {
    let short = c.v_max - s.velocity;
    v.spawn_position + c.v_max * (t - v.spawn_time) - s.position + short * short / (2.0 * c.a_acc)
}

/// Mean cooperative cost read at clearance (or at the end of the run) and cooperative clearances
/// per second of the span up to the last one.
fn fleet(result: &SimResult, c: &ScenarioConfig) -> (f64, f64) {
    let mut costs = Vec::new();
    let mut cleared = Vec::new();
    for r in result.vehicles.iter().filter(|r| r.vehicle.cooperative) {
        let t = r.clearance_time.unwrap_or(result.end_time);
        costs.push(cost_at(&r.vehicle, r.log.state_at(t), t, c));
        cleared.extend(r.clearance_time);
    }
    if costs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = costs.iter().sum::<f64>() / costs.len() as f64;
    let span = cleared.iter().copied().fold(0.0, f64::max);
    let throughput = if span > 0.0 { cleared.len() as f64 / span } else { 0.0 };
    (mean, throughput)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn criterion_1_lemma_closed_form() {
    let start = Instant::now();
    let c = defaults();
    let sep = spacing(&c);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let roads = rng.gen_range(2..=3);
        let window = rng.gen_range(2..=6);
        let geometry = RoadGeometry::uniform(roads, c.d[0]).unwrap();
        let cross = |front: usize, back: usize| if front == back { 0.0 } else { geometry.extent(front) };
        // Everyone but the ego is mutually separated and ahead of the ego, which is last on its road.
        let mut placed = Vec::new();
        let mut p: f64 = rng.gen_range(-700.0..-300.0);
        for k in 0..window - 1 {
            let road = rng.gen_range(0..roads);
            if k > 0 {
                let (front, _) = placed[k - 1];
                p -= sep + cross(front, road) + rng.gen_range(0.0..25.0);
            }
            placed.push((road, p));
        }
        let ego_road = rng.gen_range(0..roads);
        let ego_p = p - rng.gen_range(1e-3..40.0);
        placed.push((ego_road, ego_p));
        let mut ranks = vec![0; roads];
        let members = placed
            .iter()
            .enumerate()
            .map(|(k, &(road, pos))| {
                ranks[road] += 1;
                Member { id: k as u32 + 1, road, rank: ranks[road] - 1, live: pos, eq_pos: pos }
            })
            .collect();
        let info = CollectedInfo { ego: window as u32, members };
        let (pred_road, pred_p) = placed[window - 2];
        let closed = (pred_p - (sep + cross(pred_road, ego_road))).min(ego_p);
        let solved = solve_order_opt(&info, sep, &geometry)[&info.ego];
        worst = worst.max((solved - closed).abs());
    }
    report(1, "lemma closed form", worst <= 1e-9, start.elapsed(), Duration::from_secs(10), &format!("max error {worst:e}"));
}

/// Sampled referee: zone co-occupancy across roads and body overlap within a road, for pairs
/// involving a cooperative vehicle.
fn sampled_conflicts(result: &SimResult, c: &ScenarioConfig, dt: f64) -> usize {
    let margin = 1e-6;
    let mut pairs = std::collections::BTreeSet::new();
    let mut k = 0u64;
    loop {
        let t = k as f64 * dt;
        if t > result.end_time {
            break;
        }
        let inside: Vec<(u32, usize, bool, f64)> = result
            .vehicles
            .iter()
            .filter(|r| r.vehicle.spawn_time <= t && t <= r.clearance_time.unwrap_or(result.end_time))
            .filter_map(|r| {
                let p = r.log.position_at(t);
                (p > margin && p < c.l + c.d[r.vehicle.road] - margin).then_some((r.vehicle.id, r.vehicle.road, r.vehicle.cooperative, p))
            })
            .collect();
        for (i, a) in inside.iter().enumerate() {
            for b in &inside[i + 1..] {
                let clash = if a.1 == b.1 { (a.3 - b.3).abs() < c.l - margin } else { true };
                if clash && (a.2 || b.2) {
                    pairs.insert((a.0.min(b.0), a.0.max(b.0)));
                }
            }
        }
        k += 1;
    }
    pairs.len()
}

#[test]
fn criterion_2_cooperative_safety() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let kinds = [BehaviorKind::ConstantSpeed, BehaviorKind::BrakingPulse, BehaviorKind::RandomBounded, BehaviorKind::Mixed];
    let (mut audited, mut sampled, mut noncoop) = (0, 0, 0);
    for k in 0..500 {
        let config = ScenarioConfig {
            a_range: [0.0, 200.0, 600.0][rng.gen_range(0..3)],
            b_range: 200.0,
            lambda_coop: rng.gen_range(0.4..=1.2),
            lambda_noncoop: rng.gen_range(0.0..=0.3),
            noncoop_behavior: kinds[k % kinds.len()],
            horizon: 60.0,
            ..defaults()
        };
        assert!(config.b_range >= config.b_bound());
        let scenario = generate_scenario(&config, rng.gen()).unwrap();
        noncoop += scenario.noncoop_count();
        let result = run(&scenario, Policy::TwoStage);
        audited += result.cooperative_violations();
        sampled += sampled_conflicts(&result, &config, 0.01);
    }
    report(
        2,
        "cooperative safety in mixed traffic",
        audited == 0 && sampled == 0 && noncoop > 0,
        start.elapsed(),
        Duration::from_secs(300),
        &format!("audit {audited}, sampled {sampled}, {noncoop} non-cooperative vehicles"),
    );
}

#[test]
fn criterion_3_no_slowdown() {
    let start = Instant::now();
    let c = ScenarioConfig { a_range: 0.0, lambda_coop: 0.0, lambda_noncoop: 0.0, ..defaults() };
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let (mut worst_v, mut worst_cost, mut samples) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..50 {
        let count = rng.gen_range(2..=12);
        let mut t = 0.0;
        let mut prev = None;
        let mut vehicles = Vec::new();
        for k in 0..count {
            let road = rng.gen_range(0..c.roads);
            if let Some(front) = prev {
                let need = spacing(&c) + if front != road { c.d[front] } else { 0.0 };
                t += need / c.v_max + rng.gen_range(0.01..1.0);
            }
            prev = Some(road);
            vehicles.push(Vehicle { id: k + 1, road, cooperative: true, limits: c.limits(), spawn_time: t, spawn_position: -c.b_range });
        }
        let scenario = Scenario::from_vehicles(c.clone(), 0, vehicles, BTreeMap::new()).unwrap();
        let result = run(&scenario, Policy::TwoStage);
        for r in &result.vehicles {
            let end = r.clearance_time.expect("every vehicle clears");
            let t0 = r.vehicle.spawn_time;
            let mut k = 0;
            loop {
                let t = (t0 + k as f64 * 0.01).min(end);
                let s = r.log.state_at(t);
                if (-c.b_range..=0.0).contains(&s.position) {
                    worst_v = worst_v.max((s.velocity - c.v_max).abs());
                    samples += 1;
                }
                if t >= end {
                    break;
                }
                k += 1;
            }
            let grew = cost_at(&r.vehicle, r.log.state_at(end), end, &c) - cost_at(&r.vehicle, r.log.state_at(t0), t0, &c);
            worst_cost = worst_cost.max(grew.abs());
        }
    }
    report(
        3,
        "no slowdown with design spacing",
        worst_v <= 1e-9 && worst_cost <= 1e-6,
        start.elapsed(),
        Duration::from_secs(60),
        &format!("{samples} samples, max speed error {worst_v:e}, max cost increment {worst_cost:e}"),
    );
}

#[test]
fn criterion_4_convergence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let (mut worst_slack, mut worst_disp, mut missing, mut largest) = (f64::INFINITY, 0.0f64, 0, 0);
    for _ in 0..50 {
        let config = ScenarioConfig {
            a_range: 1200.0,
            lambda_coop: rng.gen_range(0.1..0.3),
            lambda_noncoop: 0.0,
            horizon: 60.0,
            ..defaults()
        };
        let mut scenario = generate_scenario(&config, rng.gen()).unwrap();
        scenario.vehicles.truncate(20);
        largest = largest.max(scenario.vehicles.len());
        let result = run(&scenario, Policy::TwoStage);
        // Spacing and extents as jittered for this scenario.
        let sep = scenario.sep;
        for me in &result.vehicles {
            let Some(th) = me.handoff_time else {
                missing += 1;
                continue;
            };
            // Every cooperative vehicle present when this one reaches the short horizon.
            let pm = me.log.position_at(th);
            for other in result.vehicles.iter().filter(|o| o.vehicle.id != me.vehicle.id) {
                if other.vehicle.spawn_time > th || other.clearance_time.is_some_and(|c| c <= th) {
                    continue;
                }
                let po = other.log.position_at(th);
                let (front_road, gap) =
                    if pm >= po { (me.vehicle.road, pm - po) } else { (other.vehicle.road, po - pm) };
                let cross = if me.vehicle.road != other.vehicle.road { scenario.geometry.extent(front_road) } else { 0.0 };
                worst_slack = worst_slack.min(gap - sep - cross);
            }
            // Speed over the last long-horizon epoch before the handoff.
            if let Some(e) = me.epochs.last() {
                let k = scenario.epoch_times.partition_point(|x| *x <= e.time + 1e-9);
                let next = scenario.epoch_times.get(k).copied().unwrap_or(f64::INFINITY).min(th);
                let moved = me.log.position_at(next) - me.log.position_at(e.time);
                worst_disp = worst_disp.max((moved - config.v_max * (next - e.time)).abs());
            }
        }
    }
    report(
        4,
        "long-horizon convergence",
        worst_slack >= -1e-6 && worst_disp <= 1e-6 && missing == 0 && largest <= 20,
        start.elapsed(),
        Duration::from_secs(120),
        &format!("min slack {worst_slack:.6}, max displacement error {worst_disp:e}, {missing} never handed off"),
    );
}

/// Mean cost and throughput for one traffic setting over seeds `0..seeds`, per seed.
fn per_seed(config: &ScenarioConfig, policy: Policy, seeds: u64) -> Vec<(f64, f64)> {
    (0..seeds)
        .map(|seed| {
            let scenario = generate_scenario(config, seed).unwrap();
            fleet(&run(&scenario, policy), config)
        })
        .collect()
}

#[test]
fn criterion_5_range_helps_under_heavy_traffic() {
    let start = Instant::now();
    let interval = |a: f64, lambda: f64| {
        let config = ScenarioConfig { a_range: a, window: 6, b_range: 200.0, lambda_coop: lambda, lambda_noncoop: 0.0, horizon: 100.0, ..defaults() };
        let costs: Vec<f64> = per_seed(&config, Policy::TwoStage, 50).into_iter().map(|r| r.0).collect();
        mean_se(&costs)
    };
    let (hi_long, hi_long_se) = interval(600.0, 1.0);
    let (hi_none, hi_none_se) = interval(0.0, 1.0);
    let (lo_long, lo_long_se) = interval(600.0, 0.6);
    let (lo_none, lo_none_se) = interval(0.0, 0.6);
    let heavy_separated = hi_long + 2.0 * hi_long_se < hi_none - 2.0 * hi_none_se;
    let heavy_gap = hi_none - hi_long;
    let light_gap = (lo_none - lo_long).abs();
    let light_overlap = (lo_long - 2.0 * lo_long_se) <= (lo_none + 2.0 * lo_none_se)
        && (lo_none - 2.0 * lo_none_se) <= (lo_long + 2.0 * lo_long_se);
    report(
        5,
        "long range lowers cost when traffic is heavy",
        heavy_separated && (light_overlap || light_gap < 0.2 * heavy_gap),
        start.elapsed(),
        Duration::from_secs(600),
        &format!(
            "lambda 1: {hi_long:.2}±{hi_long_se:.2} vs {hi_none:.2}±{hi_none_se:.2}; lambda 0.6: {lo_long:.2}±{lo_long_se:.2} vs {lo_none:.2}±{lo_none_se:.2}"
        ),
    );
}

#[test]
fn criterion_6_two_stage_beats_baseline() {
    let start = Instant::now();
    let mut worst = 1.0f64;
    let mut lines = Vec::new();
    for lambda_noncoop in [0.0, 0.1, 0.2] {
        for lambda_coop in [0.6, 1.0] {
            let config = ScenarioConfig { a_range: 600.0, window: 6, lambda_coop, lambda_noncoop, horizon: 100.0, ..defaults() };
            let ours = per_seed(&config, Policy::TwoStage, 50);
            let base = per_seed(&config, Policy::BaselineMinimax, 50);
            let n = ours.len() as f64;
            let cost_share = ours.iter().zip(&base).filter(|(o, b)| o.0 <= b.0).count() as f64 / n;
            let tp_share = ours.iter().zip(&base).filter(|(o, b)| o.1 >= b.1).count() as f64 / n;
            worst = worst.min(cost_share).min(tp_share);
            lines.push(format!("({lambda_noncoop},{lambda_coop}): cost {cost_share:.2} throughput {tp_share:.2}"));
        }
    }
    report(
        6,
        "two-stage policy against the minimax baseline",
        worst >= 0.8,
        start.elapsed(),
        Duration::from_secs(900),
        &format!("paired-seed win shares {}", lines.join("; ")),
    );
}

/// Constant-acceleration pieces of a vehicle that brakes fully from `t0` until `switch` and then
/// accelerates fully, with speed kept in [0, v_max]. Each piece is (start, position, speed, accel).
fn brake_then_go(t0: f64, p: f64, v: f64, switch: f64, c: &ScenarioConfig) -> Vec<(f64, f64, f64, f64)> {
    let mut pieces = Vec::new();
    let mut t = t0;
    let (mut p, mut v) = (p, v);
    let braking = (switch - t0).max(0.0).min(v / c.a_dec);
    if braking > 0.0 {
        pieces.push((t, p, v, -c.a_dec));
        p += v * braking - 0.5 * c.a_dec * braking * braking;
        v = (v - c.a_dec * braking).max(0.0);
        t += braking;
    }
    if switch > t {
        pieces.push((t, p, v, 0.0));
        t = switch;
    }
    let rise = (c.v_max - v) / c.a_acc;
    if rise > 0.0 {
        pieces.push((t, p, v, c.a_acc));
        p += v * rise + 0.5 * c.a_acc * rise * rise;
        t += rise;
    }
    pieces.push((t, p, c.v_max, 0.0));
    pieces
}

fn piece_at(pieces: &[(f64, f64, f64, f64)], t: f64) -> (f64, f64, f64) {
    let k = pieces.partition_point(|x| x.0 <= t).max(1) - 1;
    let (s, p, v, a) = pieces[k];
    let dt = t - s;
    (p + v * dt + 0.5 * a * dt * dt, v + a * dt, a)
}

/// Smallest leader-minus-follower gap over `[from, to]`, exact for piecewise quadratic motion.
fn min_gap(leader: &[(f64, f64, f64, f64)], ego: &[(f64, f64, f64, f64)], from: f64, to: f64) -> f64 {
    let mut cuts: Vec<f64> = leader.iter().chain(ego).map(|x| x.0).filter(|t| *t > from && *t < to).collect();
    cuts.extend([from, to]);
    cuts.sort_by(f64::total_cmp);
    let mut worst = f64::INFINITY;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (pl, vl, al) = piece_at(leader, a);
        let (pe, ve, ae) = piece_at(ego, a);
        let (gap, rate, curve) = (pl - pe, vl - ve, al - ae);
        worst = worst.min(gap);
        let end = b - a;
        worst = worst.min(gap + rate * end + 0.5 * curve * end * end);
        if curve > 0.0 {
            let tv = -rate / curve;
            if tv > 0.0 && tv < end {
                worst = worst.min(gap + rate * tv + 0.5 * curve * tv * tv);
            }
        }
    }
    worst
}

#[test]
fn criterion_7_follower_set() {
    let start = Instant::now();
    let c = defaults();
    let limits = c.limits();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut disagreements, mut banded, mut inside) = (0, 0, 0);
    for _ in 0..500 {
        let t1 = 10.0;
        let v = rng.gen_range(0.0..=20.0);
        let p = -v * v / (2.0 * c.a_dec) - rng.gen_range(-2.0..150.0);
        let u = rng.gen_range(0.0..=20.0);
        let stamp = t1 - rng.gen_range(0.0..=0.2);
        let clearance = if rng.gen_bool(0.5) { c.l } else { c.l + c.d[0] };
        let q = p + clearance + rng.gen_range(-3.0..40.0);
        let obs = Observation { subject: 0, state: VehicleState::new(q, u), stamp };
        let member = f_fol_member(VehicleState::new(p, v), t1, Some((&obs, clearance)), &limits, 64);

        // Both brake until a common switch time on a 1 ms grid, then both accelerate.
        let stop_leader = stamp + u / c.a_dec;
        let stop_ego = t1 + v / c.a_dec;
        let last = stop_leader.max(stop_ego) + 1.0;
        let mut switches: Vec<f64> = (0..).map(|k| t1 + k as f64 * 1e-3).take_while(|s| *s <= last).collect();
        switches.extend([stop_leader, stop_ego].into_iter().filter(|s| *s >= t1));
        let margin = switches
            .into_iter()
            .map(|s| {
                let leader = brake_then_go(stamp, q, u, s, &c);
                let ego = brake_then_go(t1, p, v, s, &c);
                min_gap(&leader, &ego, t1, s + c.v_max / c.a_acc + 1.0) - clearance
            })
            .fold(f64::INFINITY, f64::min);
        let can_stop = p + v * v / (2.0 * c.a_dec) <= 1e-9;
        let expected = can_stop && margin >= 0.0;
        inside += usize::from(expected);
        if member != expected {
            if margin.abs() <= 1e-6 {
                banded += 1;
            } else {
                disagreements += 1;
            }
        }
    }
    report(
        7,
        "follower set against a dense oracle",
        disagreements == 0,
        start.elapsed(),
        Duration::from_secs(60),
        &format!("{disagreements} disagreements, {banded} inside the margin band, {inside} of 500 members"),
    );
}

#[test]
fn criterion_8_deterministic_output() {
    let start = Instant::now();
    let config = ScenarioConfig { lambda_noncoop: 0.1, horizon: 60.0, ..defaults() };
    let render_run = || {
        let mut out = Vec::new();
        let mut sink = Vec::new();
        let mut traj = Vec::new();
        let opts = RunOptions { config: config.clone(), seed: Some(1), policy: Policy::TwoStage };
        run_once(&opts, &mut out, Some(&mut traj), &mut sink).unwrap();
        (out, traj)
    };
    let render_sweep = || {
        let spec = SweepSpec {
            base: ScenarioConfig { horizon: 40.0, ..defaults() },
            a_range: vec![0.0, 600.0],
            window: vec![6],
            lambda_coop: vec![0.6, 1.0],
            lambda_noncoop: vec![0.0, 0.1],
            policies: vec![Policy::TwoStage, Policy::BaselineMinimax],
            replications: 2,
            first_seed: 5,
        };
        let mut out = Vec::new();
        write_sweep(&sweep(&spec).unwrap(), &mut out).unwrap();
        out
    };
    let render_verify = || {
        let mut out = Vec::new();
        verify_to(Suite::Oracles, 3, 20, &mut out).unwrap();
        out
    };
    let run_same = render_run() == render_run();
    let sweep_same = render_sweep() == render_sweep();
    let verify_same = render_verify() == render_verify();
    report(
        8,
        "byte-identical repeated output",
        run_same && sweep_same && verify_same,
        start.elapsed(),
        Duration::from_secs(60),
        &format!("run {run_same}, sweep {sweep_same}, verify {verify_same}"),
    );
}

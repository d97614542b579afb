//! Adversary occupancy tubes, the rollout value of a target state, and the minimax selection.

use crate::kinematics::{advance, KinematicLimits, VehicleState, EPS};
use crate::safety::Window;

use super::Observation;

/// Time for full acceleration from `s` to bring the front to `x`.
pub fn time_to_reach(s: VehicleState, x: f64, limits: &KinematicLimits) -> f64 {
    let dx = x - s.position;
    if dx <= 0.0 {
        return 0.0;
    }
    let v = s.velocity;
    let a = limits.a_acc;
    let t_sat = (limits.v_max - v) / a;
    let d_sat = v * t_sat + 0.5 * a * t_sat * t_sat;
    if dx <= d_sat {
        2.0 * dx / (v + (v * v + 2.0 * a * dx).sqrt())
    } else {
        t_sat + (dx - d_sat) / limits.v_max
    }
}

/// Time for full braking from `s` to bring the front to `x`; `None` if it stops short.
fn time_to_reach_braking(s: VehicleState, x: f64, limits: &KinematicLimits) -> Option<f64> {
    let dx = x - s.position;
    if dx <= 0.0 {
        return Some(0.0);
    }
    let v = s.velocity;
    let disc = v * v - 2.0 * limits.a_dec * dx;
    if disc < 0.0 || v <= 0.0 {
        return None;
    }
    Some(2.0 * dx / (v + disc.sqrt()))
}

/// Extreme zone-occupancy behaviour of one uncertain vehicle, derived from its last observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversaryView {
    /// Window when it accelerates fully from the observation.
    pub accel: Window,
    /// Window when it brakes fully; `None` if it would stop before the zone.
    pub brake: Option<Window>,
    /// Latest possible exit over every feasible continuation (infinite if it can stop short of clearing).
    pub latest_exit: f64,
}

impl AdversaryView {
    /// `None` once the observed vehicle has cleared the zone.
    pub fn from_observation(obs: &Observation, zone_end: f64, limits: &KinematicLimits) -> Option<Self> {
        let s = obs.state;
        if s.position >= zone_end {
            return None;
        }
        let accel = Window {
            entry: obs.stamp + time_to_reach(s, 0.0, limits),
            exit: obs.stamp + time_to_reach(s, zone_end, limits),
        };
        let stop = limits.stop_envelope(s);
        let brake = if stop <= 0.0 {
            None
        } else {
            let entry = obs.stamp + time_to_reach_braking(s, 0.0, limits).unwrap_or(0.0);
            let exit = time_to_reach_braking(s, zone_end, limits).map_or(f64::INFINITY, |t| obs.stamp + t);
            Some(Window { entry, exit })
        };
        let latest_exit = if stop >= zone_end { brake.map_or(f64::INFINITY, |w| w.exit) } else { f64::INFINITY };
        Some(Self { accel, brake, latest_exit })
    }

    pub fn earliest_entry(&self) -> f64 {
        self.accel.entry
    }
}

/// Joint extreme continuations of the uncertain vehicles.
#[derive(Debug, Clone, Default)]
pub struct ScenarioSet {
    enumerated: Vec<AdversaryView>,
    fixed: Vec<Window>,
}

impl ScenarioSet {
    /// Enumerates both extremes for the `max_enumerated` earliest-arriving vehicles; the rest play full acceleration.
    pub fn new(views: &[AdversaryView], max_enumerated: usize) -> Self {
        let mut sorted = views.to_vec();
        sorted.sort_by(|a, b| a.earliest_entry().total_cmp(&b.earliest_entry()));
        let split = sorted.len().min(max_enumerated);
        let fixed = sorted[split..].iter().map(|v| v.accel).collect();
        sorted.truncate(split);
        Self { enumerated: sorted, fixed }
    }

    pub fn is_empty(&self) -> bool {
        self.enumerated.is_empty() && self.fixed.is_empty()
    }

    pub fn count(&self) -> usize {
        1 << self.enumerated.len()
    }

    pub fn windows(&self, index: usize, out: &mut Vec<Window>) {
        out.clear();
        out.extend_from_slice(&self.fixed);
        for (k, v) in self.enumerated.iter().enumerate() {
            if index >> k & 1 == 0 {
                out.push(v.accel);
            } else if let Some(w) = v.brake {
                out.push(w);
            }
        }
    }
}

/// Windows of one scenario sorted by entry, with the running maximum of their exits.
#[derive(Debug, Clone, Default)]
pub struct OccupancyTable {
    entries: Vec<f64>,
    max_exit: Vec<f64>,
}

impl OccupancyTable {
    pub fn new(windows: &[Window]) -> Self {
        let mut sorted = windows.to_vec();
        sorted.sort_by(|a, b| a.entry.total_cmp(&b.entry));
        let mut running = f64::NEG_INFINITY;
        let max_exit = sorted
            .iter()
            .map(|w| {
                running = running.max(w.exit);
                running
            })
            .collect();
        Self { entries: sorted.iter().map(|w| w.entry).collect(), max_exit }
    }

    /// Latest exit among windows overlapping `mine`, if any.
    pub fn blocking(&self, mine: &Window) -> Option<f64> {
        let k = self.entries.partition_point(|e| e + EPS < mine.exit);
        let m = *self.max_exit[..k].last()?;
        (m > mine.entry + EPS).then_some(m)
    }
}

impl ScenarioSet {
    /// Occupancy tables of the scenarios that can set the worst value. A vehicle able to stop short of
    /// the zone occupies nothing when braking, and a scenario whose windows are a subset of another's
    /// never waits longer, so those scenarios are skipped.
    pub fn tables(&self) -> Vec<OccupancyTable> {
        let absent: usize = self
            .enumerated
            .iter()
            .enumerate()
            .filter(|(_, v)| v.brake.is_none())
            .map(|(k, _)| 1 << k)
            .sum();
        let mut buf = Vec::new();
        (0..self.count())
            .filter(|k| k & absent == 0)
            .map(|k| {
                self.windows(k, &mut buf);
                OccupancyTable::new(&buf)
            })
            .collect()
    }
}

/// What the relative cost needs to know about the ego.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReference {
    pub spawn_time: f64,
    pub spawn_position: f64,
    pub limits: KinematicLimits,
}

impl CostReference {
    pub fn cost(&self, t: f64, s: VehicleState) -> f64 {
        let l = &self.limits;
        let recovery = l.v_max - s.velocity;
        self.spawn_position + l.v_max * (t - self.spawn_time) - s.position + recovery * recovery / (2.0 * l.a_acc)
    }
}

/// Ego continuation used by the value rollout: approach at full acceleration until the stopping
/// envelope reaches the entry line, brake along it, and launch at full acceleration at a chosen time.
#[derive(Debug, Clone)]
pub struct Approach {
    t1: f64,
    start: VehicleState,
    committed: bool,
    t_brake: f64,
    brake_state: VehicleState,
    t_stop: f64,
    zone_end: f64,
    limits: KinematicLimits,
    memo: Vec<(f64, f64)>,
}

impl Approach {
    pub fn new(t1: f64, start: VehicleState, zone_end: f64, limits: KinematicLimits) -> Self {
        let env = limits.stop_envelope(start);
        let committed = env > EPS;
        let mut tau = 0.0;
        if env < 0.0 {
            let ratio = 1.0 + limits.a_acc / limits.a_dec;
            let c2 = 0.5 * limits.a_acc * ratio;
            let c1 = start.velocity * ratio;
            tau = -2.0 * env / (c1 + (c1 * c1 - 4.0 * c2 * env).sqrt());
            let t_sat = (limits.v_max - start.velocity) / limits.a_acc;
            if tau > t_sat {
                let sat = advance(start, limits.a_acc, t_sat, &limits);
                tau = t_sat + (-limits.stop_envelope(sat)).max(0.0) / limits.v_max;
            }
        }
        let brake_state = advance(start, limits.a_acc, tau, &limits);
        let t_brake = t1 + tau;
        let t_stop = t_brake + brake_state.velocity / limits.a_dec;
        Self { t1, start, committed, t_brake, brake_state, t_stop, zone_end, limits, memo: Vec::new() }
    }

    pub fn is_committed(&self) -> bool {
        self.committed
    }

    pub fn state_at(&self, g: f64) -> VehicleState {
        if self.committed {
            return advance(self.start, self.limits.a_acc, g - self.t1, &self.limits);
        }
        if g <= self.t_brake {
            advance(self.start, self.limits.a_acc, g - self.t1, &self.limits)
        } else {
            advance(self.brake_state, -self.limits.a_dec, g - self.t_brake, &self.limits)
        }
    }

    /// Zone window when launching at time `g`.
    pub fn window(&self, g: f64) -> Window {
        let s = self.state_at(g);
        Window {
            entry: g + time_to_reach(s, 0.0, &self.limits),
            exit: g + time_to_reach(s, self.zone_end, &self.limits),
        }
    }

    /// Earliest launch time whose entry is not before `x`.
    fn launch_for_entry(&mut self, x: f64) -> f64 {
        if let Some(&(_, g)) = self.memo.iter().find(|(k, _)| *k == x) {
            return g;
        }
        let g = self.solve_launch(x);
        self.memo.push((x, g));
        g
    }

    fn entry(&self, g: f64) -> f64 {
        g + time_to_reach(self.state_at(g), 0.0, &self.limits)
    }

    /// Entry time grows strictly with the launch time while braking, so a safeguarded
    /// false-position search converges quickly; the returned time always satisfies the bound.
    fn solve_launch(&self, x: f64) -> f64 {
        if self.entry(self.t1) >= x {
            return self.t1;
        }
        let at_stop = self.entry(self.t_stop);
        if x >= at_stop {
            // At rest the entry trails the launch by a fixed delay.
            let mut g = self.t_stop.max(x - (self.entry(self.t_stop + 1.0) - (self.t_stop + 1.0)));
            while self.entry(g) < x {
                g += (x - self.entry(g)).max(g.abs() * f64::EPSILON);
            }
            return g;
        }
        let (mut lo, mut hi) = (self.t_brake.max(self.t1), self.t_stop);
        let (mut f_lo, mut f_hi) = (self.entry(lo) - x, at_stop - x);
        let mut side = 0i8;
        for _ in 0..100 {
            if hi - lo <= 1e-10 || f_hi <= 1e-10 {
                break;
            }
            let mut mid = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
            if !(mid > lo && mid < hi) {
                mid = 0.5 * (lo + hi);
            }
            let f = self.entry(mid) - x;
            if f >= 0.0 {
                hi = mid;
                f_hi = f;
                if side == 1 {
                    f_lo *= 0.5;
                }
                side = 1;
            } else {
                lo = mid;
                f_lo = f;
                if side == -1 {
                    f_hi *= 0.5;
                }
                side = -1;
            }
        }
        hi
    }

    /// Relative cost after waiting out the occupied windows; infinite if a committed ego cannot avoid them.
    pub fn rollout(&mut self, cost: &CostReference, table: &OccupancyTable, horizon: f64) -> f64 {
        let deadline = self.t1 + horizon;
        let mut g = self.t1;
        loop {
            let Some(blocking) = table.blocking(&self.window(g)) else {
                return cost.cost(g, self.state_at(g));
            };
            if self.committed {
                return f64::INFINITY;
            }
            if !blocking.is_finite() {
                return cost.cost(deadline, self.state_at(deadline));
            }
            let next = self.launch_for_entry(blocking);
            if next > deadline {
                return cost.cost(deadline, self.state_at(deadline));
            }
            g = next.max(g + 1e-12);
        }
    }
}

/// Rollout value of one target state under one scenario.
pub fn minimax_value(
    cost: &CostReference,
    t1: f64,
    endpoint: VehicleState,
    zone_end: f64,
    windows: &[Window],
    horizon: f64,
) -> f64 {
    Approach::new(t1, endpoint, zone_end, cost.limits).rollout(cost, &OccupancyTable::new(windows), horizon)
}

/// Values of one target state under every scenario table.
pub fn scenario_values(
    cost: &CostReference,
    t1: f64,
    endpoint: VehicleState,
    zone_end: f64,
    tables: &[OccupancyTable],
    horizon: f64,
) -> Vec<f64> {
    let mut approach = Approach::new(t1, endpoint, zone_end, cost.limits);
    tables.iter().map(|t| approach.rollout(cost, t, horizon)).collect()
}

/// Index of the candidate minimizing its worst scenario value; ties prefer larger position, then velocity.
pub fn minimax_select(targets: &[VehicleState], values: &[Vec<f64>]) -> Option<usize> {
    let worst: Vec<f64> = values.iter().map(|v| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
    select_min(targets, &worst)
}

pub(crate) fn select_min(targets: &[VehicleState], worst: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in 0..targets.len() {
        let Some(b) = best else {
            best = Some(i);
            continue;
        };
        let (wi, wb) = (worst[i], worst[b]);
        let tie = wi == wb || (wi - wb).abs() <= EPS;
        let better = if tie {
            let (ti, tb) = (targets[i], targets[b]);
            ti.position > tb.position + EPS
                || ((ti.position - tb.position).abs() <= EPS && ti.velocity >= tb.velocity - EPS)
        } else {
            wi < wb
        };
        if better {
            best = Some(i);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn limits() -> KinematicLimits {
        KinematicLimits::new(20.0, 4.0, 3.0, 5.0).unwrap()
    }

    fn reference() -> CostReference {
        CostReference { spawn_time: 0.0, spawn_position: -200.0, limits: limits() }
    }

    #[test]
    fn free_ideal_endpoint_costs_nothing() {
        let v = minimax_value(&reference(), 1.0, VehicleState::new(-180.0, 20.0), 10.0, &[], 120.0);
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn slow_endpoint_costs_its_recovery() {
        let v = minimax_value(&reference(), 1.0, VehicleState::new(-180.0, 14.0), 10.0, &[], 120.0);
        assert_abs_diff_eq!(v, 36.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn waiting_at_the_line_matches_a_launch_time_search() {
        // Ego stopped at the line; the zone is occupied until T.
        let cost = reference();
        let t1 = 20.0;
        let start = VehicleState::new(-0.0, 0.0);
        let block = Window { entry: 0.0, exit: 27.0 };
        let v = minimax_value(&cost, t1, start, 10.0, &[block], 120.0);
        let expected = -200.0 + 20.0 * 27.0 + 400.0 / 6.0;
        assert_abs_diff_eq!(v, expected, epsilon = 1e-6);
    }

    #[test]
    fn approach_value_matches_brute_force_launch_search() {
        let cost = reference();
        let limits = limits();
        let t1 = 5.0;
        let start = VehicleState::new(-90.0, 12.0);
        let block = Window { entry: 0.0, exit: 11.3 };
        let v = minimax_value(&cost, t1, start, 10.0, &[block], 120.0);
        // Brute force: advance the same approach on a 1 ms grid and take the first admissible launch.
        let approach = Approach::new(t1, start, 10.0, limits);
        let mut g = t1;
        let mut oracle = f64::INFINITY;
        while g < t1 + 30.0 {
            if approach.window(g).entry >= block.exit {
                oracle = cost.cost(g, approach.state_at(g));
                break;
            }
            g += 1e-3;
        }
        assert!(v <= oracle + 1e-9, "{v} vs {oracle}");
        assert!(oracle - v < 0.05, "{v} vs {oracle}");
    }

    #[test]
    fn committed_endpoint_conflict_is_infinite() {
        let cost = reference();
        let block = Window { entry: 0.0, exit: 50.0 };
        let v = minimax_value(&cost, 1.0, VehicleState::new(-10.0, 20.0), 10.0, &[block], 120.0);
        assert!(v.is_infinite());
    }

    #[test]
    fn adversary_views() {
        let l = limits();
        let obs = Observation { subject: 1, state: VehicleState::new(-1.0, 0.0), stamp: 2.0 };
        let view = AdversaryView::from_observation(&obs, 10.0, &l).unwrap();
        assert!(view.brake.is_none());
        assert!(view.latest_exit.is_infinite());
        assert_abs_diff_eq!(view.accel.entry, 2.0 + (2.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        let fast = Observation { subject: 2, state: VehicleState::new(-20.0, 20.0), stamp: 0.0 };
        let view = AdversaryView::from_observation(&fast, 10.0, &l).unwrap();
        let brake = view.brake.unwrap();
        assert!(brake.exit.is_finite());
        assert_eq!(view.latest_exit, brake.exit);
        let gone = Observation { subject: 3, state: VehicleState::new(11.0, 20.0), stamp: 0.0 };
        assert!(AdversaryView::from_observation(&gone, 10.0, &l).is_none());
    }

    #[test]
    fn table_blocking_matches_a_scan() {
        let ws = [
            Window { entry: 5.0, exit: 6.0 },
            Window { entry: 1.0, exit: 9.0 },
            Window { entry: 7.0, exit: 7.5 },
            Window { entry: 12.0, exit: f64::INFINITY },
        ];
        let table = OccupancyTable::new(&ws);
        for (a, b) in [(0.0, 0.5), (0.0, 2.0), (8.0, 10.0), (9.0, 11.0), (9.0, 13.0), (6.5, 6.8)] {
            let mine = Window { entry: a, exit: b };
            let scan = ws
                .iter()
                .filter(|w| mine.entry < w.exit - EPS && mine.exit > w.entry + EPS)
                .map(|w| w.exit)
                .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
            assert_eq!(table.blocking(&mine), scan, "{mine:?}");
        }
    }

    #[test]
    fn launch_meets_the_requested_entry() {
        // Residual speed at the stop makes the entry delay jump by a few tens of nanoseconds.
        let a = Approach::new(208.9180293264938, VehicleState::new(-59.35430912921459, 0.5041666666666178), 10.0, limits());
        for x in [214.0, 217.0, 217.0744029, 218.2569819463086, 230.5] {
            let g = a.solve_launch(x);
            assert!(a.entry(g) >= x, "{x}");
            assert!(g == a.t1 || a.entry(g) - x < 1e-9, "{x}");
        }
    }

    #[test]
    fn selection_rules() {
        let t = [VehicleState::new(-10.0, 5.0), VehicleState::new(-9.0, 4.0), VehicleState::new(-9.0, 6.0)];
        assert_eq!(minimax_select(&t[..1], &[vec![3.0]]), Some(0));
        assert_eq!(minimax_select(&t, &[vec![1.0, 5.0], vec![2.0, 3.0], vec![4.0, 4.0]]), Some(1));
        assert_eq!(minimax_select(&t, &[vec![1.0], vec![1.0], vec![1.0]]), Some(2));
        assert_eq!(minimax_select(&[], &[]), None);
    }
}


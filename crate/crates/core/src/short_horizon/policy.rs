//! One decision of the cooperative short-horizon policy, and of the single-vehicle minimax baseline.

use crate::kinematics::{advance, min_difference, ExtremeMode, KinematicLimits, Segment, Trajectory, VehicleState, EPS};
use crate::safety::occupancy_window;

use super::follow::{f_fol_member, in_region_c};
use super::minimax::{select_min, AdversaryView, Approach, OccupancyTable, ScenarioSet};
use super::{Adversary, Ego, Knowledge, Relation, ShortHorizonParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    /// Already committed: full acceleration from here on.
    Committed,
    /// Predecessor and best safe target both committed.
    Gate,
    /// No follower-feasible target: full braking.
    Brake,
    /// Minimax over follower-feasible targets.
    Minimax,
    /// Baseline minimax choice.
    Baseline,
    /// Baseline with no admissible target.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub accel: f64,
    /// Full acceleration for the rest of the run.
    pub hold: bool,
    pub branch: Branch,
    pub target: VehicleState,
}

/// Constant accelerations tried over one decision interval, ascending, always containing both extremes and zero.
pub fn candidate_accels(grid: usize, limits: &KinematicLimits) -> Vec<f64> {
    let n = grid.max(2);
    let mut out: Vec<f64> = (0..n)
        .map(|k| -limits.a_dec + (limits.a_acc + limits.a_dec) * k as f64 / (n - 1) as f64)
        .collect();
    out[n - 1] = limits.a_acc;
    out.push(0.0);
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    out
}

struct Candidate {
    accel: f64,
    target: VehicleState,
    path: Trajectory,
}

fn candidates(ego: &Ego, t_k: f64, t1: f64, params: &ShortHorizonParams) -> Vec<Candidate> {
    let dt = t1 - t_k;
    candidate_accels(params.candidate_grid, &ego.limits)
        .into_iter()
        .map(|accel| {
            let target = advance(ego.state, accel, dt, &ego.limits);
            let mut path = Trajectory::new(t_k, ego.state, ego.limits);
            path.push_segment(Segment { duration: dt, accel }).expect("grid accelerations are within limits");
            path.push_segment(Segment { duration: f64::INFINITY, accel: ego.limits.a_acc }).expect("bounded prefix");
            Candidate { accel, target, path }
        })
        .collect()
}

struct Tube {
    adversary: Adversary,
    view: AdversaryView,
    /// Same-road extreme that matters: slowest for a leader, fastest for a trailer.
    extreme: Option<Trajectory>,
}

fn tubes(adversaries: &[Adversary]) -> Vec<Tube> {
    adversaries
        .iter()
        .filter_map(|a| {
            let view = AdversaryView::from_observation(&a.obs, a.zone_end, &a.limits)?;
            let mode = match a.relation {
                Relation::CrossRoad => None,
                Relation::Leading => Some(ExtremeMode::MinAccel),
                Relation::Trailing => Some(ExtremeMode::MaxAccel),
            };
            let extreme = mode.map(|m| Trajectory::extreme(a.obs.stamp, a.obs.state, a.limits, m));
            Some(Tube { adversary: *a, view, extreme })
        })
        .collect()
}

/// A target is robustly safe if the ego can still stop before the zone, or if launching through the
/// zone at full acceleration avoids every feasible continuation of every uncertain vehicle.
fn robust_safe(c: &Candidate, ego: &Ego, tubes: &[Tube], t_k: f64) -> bool {
    if ego.limits.stop_envelope(c.target) <= EPS {
        return true;
    }
    let Some(w) = occupancy_window(&c.path, ego.zone_end, 0.0, f64::INFINITY) else {
        return true;
    };
    let (entry, exit) = (w.entry, w.exit);
    tubes.iter().all(|tube| {
        let before = exit <= tube.view.accel.entry + EPS;
        let after = entry >= tube.view.latest_exit - EPS;
        match (tube.adversary.relation, &tube.extreme) {
            (Relation::Leading, Some(slowest)) => {
                after || min_difference(slowest, &c.path, t_k, exit) >= tube.adversary.limits.length - EPS
            }
            (Relation::Trailing, Some(fastest)) => {
                before || min_difference(&c.path, fastest, t_k, exit) >= ego.limits.length - EPS
            }
            _ => before || after,
        }
    })
}

/// Baseline spacing rule: stay able to stop behind wherever a same-road leader could stop.
fn keeps_following_distance(c: &Candidate, ego: &Ego, tubes: &[Tube]) -> bool {
    let env = ego.limits.stop_envelope(c.target);
    tubes.iter().filter(|t| t.adversary.relation == Relation::Leading).all(|t| {
        let leader = t.adversary;
        env <= leader.limits.stop_envelope(leader.obs.state) - leader.limits.length + EPS
    })
}

/// Worst-case values of the candidates, computed lazily with pruning.
struct Evaluator<'a> {
    ego: &'a Ego,
    cands: &'a [Candidate],
    tables: Vec<OccupancyTable>,
    t1: f64,
    horizon: f64,
    exact: Vec<Option<f64>>,
}

impl<'a> Evaluator<'a> {
    fn new(ego: &'a Ego, cands: &'a [Candidate], tubes: &[Tube], t1: f64, params: &ShortHorizonParams) -> Self {
        let views: Vec<AdversaryView> = tubes.iter().map(|t| t.view).collect();
        let set = ScenarioSet::new(&views, params.max_enumerated);
        let tables = if set.is_empty() { Vec::new() } else { set.tables() };
        Self { ego, cands, tables, t1, horizon: params.value_horizon, exact: vec![None; cands.len()] }
    }

    fn lower_bound(&self, i: usize) -> f64 {
        self.ego.cost.cost(self.t1, self.cands[i].target)
    }

    /// Worst value of candidate `i`, or a value above `cutoff` once that is certain.
    fn worst(&mut self, i: usize, cutoff: f64) -> f64 {
        if let Some(v) = self.exact[i] {
            return v;
        }
        let target = self.cands[i].target;
        if let Some(j) = (0..i).find(|&j| self.exact[j].is_some() && self.cands[j].target == target) {
            self.exact[i] = self.exact[j];
            return self.exact[i].unwrap();
        }
        if self.tables.is_empty() {
            let v = self.lower_bound(i);
            self.exact[i] = Some(v);
            return v;
        }
        let mut approach = Approach::new(self.t1, target, self.ego.zone_end, self.ego.limits);
        let mut worst = f64::NEG_INFINITY;
        for table in &self.tables {
            worst = worst.max(approach.rollout(&self.ego.cost, table, self.horizon));
            if worst > cutoff {
                return worst;
            }
        }
        self.exact[i] = Some(worst);
        worst
    }

    /// Allowed candidate with the smallest worst value, ties broken as in [`select_min`].
    fn pick(&mut self, allowed: &[bool]) -> Option<usize> {
        let mut idx: Vec<usize> = (0..self.cands.len()).filter(|&i| allowed[i]).collect();
        let bounds: Vec<f64> = (0..self.cands.len()).map(|i| self.lower_bound(i)).collect();
        idx.sort_by(|&a, &b| bounds[a].total_cmp(&bounds[b]).then(a.cmp(&b)));
        let mut best = f64::INFINITY;
        let mut values = vec![f64::INFINITY; self.cands.len()];
        for &i in &idx {
            if bounds[i] > best + EPS {
                break;
            }
            let v = self.worst(i, best + EPS);
            values[i] = v;
            best = best.min(v);
        }
        let mut order: Vec<usize> = (0..self.cands.len()).filter(|&i| allowed[i]).collect();
        order.sort_unstable();
        let targets: Vec<VehicleState> = order.iter().map(|&i| self.cands[i].target).collect();
        let worst: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        select_min(&targets, &worst).map(|k| order[k])
    }
}

fn decision(c: &Candidate, branch: Branch) -> Decision {
    Decision { accel: c.accel, hold: false, branch, target: c.target }
}

/// Candidates are sorted by acceleration, so full braking comes first.
const BRAKE: usize = 0;

/// Best robustly safe target against the uncertain vehicles, as its acceleration and the state it reaches at `t1`.
pub fn best_safe_trajectory(
    ego: &Ego,
    knowledge: &Knowledge,
    params: &ShortHorizonParams,
    t_k: f64,
    t1: f64,
) -> (f64, VehicleState) {
    let cands = candidates(ego, t_k, t1, params);
    let tubes = tubes(&knowledge.adversaries);
    let safe: Vec<bool> = cands.iter().map(|c| robust_safe(c, ego, &tubes, t_k)).collect();
    let i = Evaluator::new(ego, &cands, &tubes, t1, params).pick(&safe).unwrap_or(BRAKE);
    (cands[i].accel, cands[i].target)
}

pub fn algorithm2_step(ego: &Ego, knowledge: &Knowledge, params: &ShortHorizonParams, t_k: f64, t1: f64) -> Decision {
    let limits = ego.limits;
    if in_region_c(ego.state, &limits) {
        return Decision {
            accel: limits.a_acc,
            hold: true,
            branch: Branch::Committed,
            target: advance(ego.state, limits.a_acc, t1 - t_k, &limits),
        };
    }
    let cands = candidates(ego, t_k, t1, params);
    let tubes = tubes(&knowledge.adversaries);
    let mut eval = Evaluator::new(ego, &cands, &tubes, t1, params);
    let safe: Vec<bool> = cands.iter().map(|c| robust_safe(c, ego, &tubes, t_k)).collect();
    let best = eval.pick(&safe).unwrap_or(BRAKE);

    let pred_committed = knowledge
        .predecessor
        .as_ref()
        .map_or(true, |p| in_region_c(p.obs.state, &limits));
    if pred_committed && in_region_c(cands[best].target, &limits) {
        return decision(&cands[best], Branch::Gate);
    }
    let pred = knowledge.predecessor.as_ref().map(|p| (&p.obs, p.clearance));
    let follower_ok: Vec<bool> = cands
        .iter()
        .map(|c| f_fol_member(c.target, t1, pred, &limits, params.t_d_grid))
        .collect();
    match eval.pick(&follower_ok) {
        None => decision(&cands[BRAKE], Branch::Brake),
        Some(i) => decision(&cands[i], Branch::Minimax),
    }
}

/// Minimax policy that treats every other vehicle as uncertain and has no committed-region shortcut.
pub fn baseline_minimax_step(ego: &Ego, knowledge: &Knowledge, params: &ShortHorizonParams, t_k: f64, t1: f64) -> Decision {
    let cands = candidates(ego, t_k, t1, params);
    let tubes = tubes(&knowledge.adversaries);
    let admissible: Vec<bool> = cands
        .iter()
        .map(|c| {
            if ego.limits.stop_envelope(c.target) <= EPS {
                keeps_following_distance(c, ego, &tubes)
            } else {
                robust_safe(c, ego, &tubes, t_k)
            }
        })
        .collect();
    match Evaluator::new(ego, &cands, &tubes, t1, params).pick(&admissible) {
        Some(i) => decision(&cands[i], Branch::Baseline),
        None => {
            let i = if in_region_c(ego.state, &ego.limits) { cands.len() - 1 } else { BRAKE };
            decision(&cands[i], Branch::Fallback)
        }
    }
}

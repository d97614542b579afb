//! Distributed self-organization far from the intersection: information collection,
//! exact order optimization over a small window, and the per-epoch position update.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::kinematics::{KinematicLimits, RoadGeometry, Segment, VehicleId, EPS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LongHorizonError {
    #[error("displacement {displacement} outside [{lo}, {hi}]")]
    Displacement { displacement: f64, lo: f64, hi: f64 },
    #[error("epoch gap {gap} cannot realize a {shift} m shift (at most {max_shift} m)")]
    EpochGapTooShort { gap: f64, shift: f64, max_shift: f64 },
    #[error("closed form precondition violated: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongHorizonParams {
    /// Length A of the long-horizon range.
    pub range: f64,
    pub window: usize,
    pub delta: f64,
    pub v_reduction: f64,
    /// Same-road spacing l + delta (kept separately so that it can carry jitter).
    pub sep: f64,
}

/// One cooperative vehicle as seen at an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoopPosition {
    pub id: VehicleId,
    pub road: usize,
    pub position: f64,
    /// p_i(0); larger means earlier in the initial order on the road.
    pub order_key: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSnapshot {
    pub time: f64,
    pub vehicles: Vec<CoopPosition>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborMap {
    pub front: Option<VehicleId>,
    pub behind: Option<VehicleId>,
    pub cross_nearest: Vec<Option<VehicleId>>,
}

/// Per-road initial order built from a snapshot; answers neighbor queries.
#[derive(Debug, Clone)]
pub struct RoadOrder {
    vehicles: BTreeMap<VehicleId, (CoopPosition, usize)>,
    roads: Vec<Vec<VehicleId>>,
}

impl RoadOrder {
    pub fn new(snapshot: &EpochSnapshot, road_count: usize) -> Self {
        let mut roads: Vec<Vec<CoopPosition>> = vec![Vec::new(); road_count];
        for v in &snapshot.vehicles {
            roads[v.road].push(*v);
        }
        let mut vehicles = BTreeMap::new();
        let roads = roads
            .into_iter()
            .map(|mut list| {
                list.sort_by(|a, b| b.order_key.total_cmp(&a.order_key).then(a.id.cmp(&b.id)));
                list.iter().enumerate().for_each(|(rank, v)| {
                    vehicles.insert(v.id, (*v, rank));
                });
                list.into_iter().map(|v| v.id).collect()
            })
            .collect();
        Self { vehicles, roads }
    }

    pub fn get(&self, id: VehicleId) -> Option<&CoopPosition> {
        self.vehicles.get(&id).map(|(v, _)| v)
    }

    pub fn rank(&self, id: VehicleId) -> usize {
        self.vehicles[&id].1
    }

    pub fn road(&self, road: usize) -> &[VehicleId] {
        &self.roads[road]
    }

    pub fn neighbors(&self, id: VehicleId) -> NeighborMap {
        let (me, rank) = self.vehicles[&id];
        let road = &self.roads[me.road];
        let front = rank.checked_sub(1).map(|r| road[r]);
        let behind = road.get(rank + 1).copied();
        let cross_nearest = (0..self.roads.len())
            .map(|r| {
                if r == me.road {
                    return None;
                }
                self.roads[r].iter().copied().min_by(|a, b| {
                    let da = (self.vehicles[a].0.order_key - me.order_key).abs();
                    let db = (self.vehicles[b].0.order_key - me.order_key).abs();
                    da.total_cmp(&db).then(a.cmp(b))
                })
            })
            .collect();
        NeighborMap { front, behind, cross_nearest }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Member {
    pub id: VehicleId,
    pub road: usize,
    /// Rank in the road's initial order (0 = front).
    pub rank: usize,
    pub live: f64,
    pub eq_pos: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectedInfo {
    pub ego: VehicleId,
    pub members: Vec<Member>,
}

impl CollectedInfo {
    pub fn member(&self, id: VehicleId) -> Option<&Member> {
        self.members.iter().find(|m| m.id == id)
    }

    pub fn eq_pos(&self, id: VehicleId) -> Option<f64> {
        self.member(id).map(|m| m.eq_pos)
    }

    pub fn ids(&self) -> Vec<VehicleId> {
        self.members.iter().map(|m| m.id).collect()
    }
}

fn centered(m: &Member, geometry: &RoadGeometry) -> f64 {
    m.eq_pos - geometry.extent(m.road) / 2.0
}

fn reclamp(members: &mut [Member], sep: f64, road_count: usize) {
    for m in members.iter_mut() {
        m.eq_pos = m.live;
    }
    for road in 0..road_count {
        let mut idx: Vec<usize> = (0..members.len()).filter(|&i| members[i].road == road).collect();
        idx.sort_by_key(|&i| members[i].rank);
        for w in 1..idx.len() {
            let front = members[idx[w - 1]].eq_pos;
            let m = &mut members[idx[w]];
            m.eq_pos = m.eq_pos.min(front - sep);
        }
    }
}

/// Builds the member set and equivalent positions for `ego` at one epoch.
pub fn collect_info(ego: VehicleId, order: &RoadOrder, params: &LongHorizonParams, geometry: &RoadGeometry) -> CollectedInfo {
    let road_count = geometry.road_count();
    let to_member = |id: VehicleId| {
        let v = order.get(id).expect("neighbor ids come from the same snapshot");
        Member { id, road: v.road, rank: order.rank(id), live: v.position, eq_pos: v.position }
    };
    let mut members = vec![to_member(ego)];
    let ego_road = members[0].road;
    let seeds = order.neighbors(ego).cross_nearest;
    let limit = params.window + 2 * road_count;

    while members.len() < limit {
        let on_road = |members: &[Member], r: usize| -> Vec<Member> {
            let mut list: Vec<Member> = members.iter().filter(|m| m.road == r).copied().collect();
            list.sort_by_key(|m| m.rank);
            list
        };
        let ego_centered = centered(&members[0], geometry);
        let mut added = None;

        // Seed empty roads with the cross-road vehicle nearest in initial order.
        for r in 0..road_count {
            if r != ego_road && on_road(&members, r).is_empty() {
                if let Some(id) = seeds[r] {
                    added = Some(id);
                    break;
                }
            }
        }
        // Extend backwards on roads whose last member is still ahead of ego.
        if added.is_none() {
            for r in 0..road_count {
                let list = on_road(&members, r);
                let Some(last) = list.last() else { continue };
                if centered(last, geometry) > ego_centered {
                    if let Some(id) = order.neighbors(last.id).behind {
                        added = Some(id);
                        break;
                    }
                }
            }
        }
        // Otherwise extend forwards from the road whose first member is furthest back.
        if added.is_none() {
            let mut firsts: Vec<Member> = (0..road_count)
                .filter_map(|r| on_road(&members, r).first().copied())
                .collect();
            firsts.sort_by(|a, b| centered(a, geometry).total_cmp(&centered(b, geometry)).then(a.road.cmp(&b.road)));
            added = firsts.iter().find_map(|m| order.neighbors(m.id).front);
        }
        let Some(id) = added else { break };
        if members.iter().any(|m| m.id == id) {
            break;
        }
        members.push(to_member(id));
        reclamp(&mut members, params.sep, road_count);
    }

    let ego_centered = centered(&members[0], geometry);
    let mut kept: Vec<Member> = members
        .into_iter()
        .filter(|m| m.id == ego || centered(m, geometry) >= ego_centered)
        .collect();
    if kept.len() > params.window {
        kept.sort_by(|a, b| {
            centered(a, geometry)
                .total_cmp(&centered(b, geometry))
                .then((a.id != ego).cmp(&(b.id != ego)))
                .then(a.id.cmp(&b.id))
        });
        kept.truncate(params.window);
    }
    kept.sort_by_key(|m| m.id);
    CollectedInfo { ego, members: kept }
}

fn required_gap(front: &Member, back: &Member, sep: f64, geometry: &RoadGeometry) -> f64 {
    if front.road == back.road {
        sep
    } else {
        sep + geometry.extent(front.road)
    }
}

/// Exact optimum of the order program over all interleavings of the per-road sequences.
pub fn solve_order_opt(info: &CollectedInfo, sep: f64, geometry: &RoadGeometry) -> BTreeMap<VehicleId, f64> {
    let road_count = geometry.road_count();
    let mut queues: Vec<Vec<Member>> = vec![Vec::new(); road_count];
    for m in &info.members {
        queues[m.road].push(*m);
    }
    for q in &mut queues {
        q.sort_by_key(|m| m.rank);
    }
    let n = info.members.len();
    let mut search = OrderSearch {
        queues,
        heads: vec![0; road_count],
        placed: Vec::with_capacity(n),
        values: Vec::with_capacity(n),
        best_sum: f64::NEG_INFINITY,
        best: Vec::new(),
        sep,
        geometry,
    };
    search.run(0.0);
    search.best.into_iter().collect()
}

struct OrderSearch<'a> {
    queues: Vec<Vec<Member>>,
    heads: Vec<usize>,
    placed: Vec<Member>,
    values: Vec<f64>,
    best_sum: f64,
    best: Vec<(VehicleId, f64)>,
    sep: f64,
    geometry: &'a RoadGeometry,
}

impl OrderSearch<'_> {
    fn run(&mut self, sum: f64) {
        let mut next: Vec<usize> = (0..self.queues.len())
            .filter(|&r| self.heads[r] < self.queues[r].len())
            .collect();
        if next.is_empty() {
            // Depth-first in ascending id order visits orders lexicographically, so only strict gains replace.
            if sum > self.best_sum + EPS || self.best.is_empty() {
                self.best_sum = sum;
                self.best = self.placed.iter().zip(&self.values).map(|(m, v)| (m.id, *v)).collect();
            }
            return;
        }
        next.sort_by_key(|&r| self.queues[r][self.heads[r]].id);
        for r in next {
            let m = self.queues[r][self.heads[r]];
            let mut value = m.live;
            for (n, pn) in self.placed.iter().zip(&self.values) {
                value = value.min(pn - required_gap(n, &m, self.sep, self.geometry));
            }
            self.heads[r] += 1;
            self.placed.push(m);
            self.values.push(value);
            self.run(sum + value);
            self.values.pop();
            self.placed.pop();
            self.heads[r] -= 1;
        }
    }
}

/// Closed-form ego optimum when the non-ego members are already mutually separated.
pub fn lemma1_closed_form(info: &CollectedInfo, sep: f64, geometry: &RoadGeometry) -> Result<f64, LongHorizonError> {
    let ego = info
        .member(info.ego)
        .copied()
        .ok_or_else(|| LongHorizonError::Precondition("ego not among members".into()))?;
    let others: Vec<&Member> = info.members.iter().filter(|m| m.id != info.ego).collect();
    if others.is_empty() {
        return Ok(ego.eq_pos);
    }
    for (i, a) in others.iter().enumerate() {
        for b in &others[i + 1..] {
            let (front, back) = if a.eq_pos >= b.eq_pos { (a, b) } else { (b, a) };
            if front.eq_pos - back.eq_pos < required_gap(front, back, sep, geometry) - EPS {
                return Err(LongHorizonError::Precondition(format!(
                    "members {} and {} are not separated",
                    front.id, back.id
                )));
            }
            if a.eq_pos > a.live + EPS {
                return Err(LongHorizonError::Precondition(format!("member {} above its live position", a.id)));
            }
        }
    }
    let ego_c = centered(&ego, geometry);
    let sm = others
        .iter()
        .min_by(|a, b| centered(a, geometry).total_cmp(&centered(b, geometry)))
        .unwrap();
    if centered(sm, geometry) <= ego_c + EPS {
        return Err(LongHorizonError::Precondition("minimal member not strictly ahead of ego".into()));
    }
    Ok((sm.eq_pos - required_gap(sm, &ego, sep, geometry)).min(ego.eq_pos))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochPlan {
    pub target: f64,
    pub segments: Vec<Segment>,
}

/// Largest distance deficit a decelerate-cruise-accelerate profile can realize within `gap`.
pub fn max_epoch_shift(gap: f64, limits: &KinematicLimits) -> f64 {
    let k = 0.5 / limits.a_dec + 0.5 / limits.a_acc;
    let by_time = gap * gap / (4.0 * k);
    let dv = gap / (2.0 * k);
    if dv <= limits.v_max {
        by_time
    } else {
        // Bounded by stopping: dv = v_max.
        limits.v_max * gap - k * limits.v_max * limits.v_max
    }
}

pub fn check_epoch_gap(gap: f64, v_reduction: f64, limits: &KinematicLimits) -> Result<(), LongHorizonError> {
    let shift = v_reduction * gap;
    let max_shift = max_epoch_shift(gap, limits);
    if shift > max_shift + EPS {
        return Err(LongHorizonError::EpochGapTooShort { gap, shift, max_shift });
    }
    Ok(())
}

/// Position update for one epoch and a realizing profile that starts and ends at v_max.
pub fn long_horizon_step(
    p_now: f64,
    p_star: f64,
    params: &LongHorizonParams,
    limits: &KinematicLimits,
    gap: f64,
) -> Result<EpochPlan, LongHorizonError> {
    let v_max = limits.v_max;
    let target = (p_now + (v_max - params.v_reduction) * gap).max(p_star + v_max * gap);
    let displacement = target - p_now;
    let lo = (v_max - params.v_reduction) * gap;
    let hi = v_max * gap;
    if displacement < lo - EPS || displacement > hi + EPS {
        return Err(LongHorizonError::Displacement { displacement, lo, hi });
    }
    let shift = (hi - displacement).max(0.0);
    Ok(EpochPlan { target, segments: shift_profile(shift, gap, limits)? })
}

/// Decelerate, cruise, accelerate: loses exactly `shift` metres against full speed over `gap`.
pub fn shift_profile(shift: f64, gap: f64, limits: &KinematicLimits) -> Result<Vec<Segment>, LongHorizonError> {
    if shift <= 0.0 {
        return Ok(vec![Segment { duration: gap, accel: 0.0 }]);
    }
    let k = 0.5 / limits.a_dec + 0.5 / limits.a_acc;
    let disc = gap * gap - 4.0 * k * shift;
    if disc < 0.0 {
        return Err(LongHorizonError::EpochGapTooShort { gap, shift, max_shift: max_epoch_shift(gap, limits) });
    }
    let dv = 2.0 * shift / (gap + disc.sqrt());
    let t_dec = dv / limits.a_dec;
    let t_acc = dv / limits.a_acc;
    let cruise = (gap - t_dec - t_acc).max(0.0);
    Ok(vec![
        Segment { duration: t_dec, accel: -limits.a_dec },
        Segment { duration: cruise, accel: 0.0 },
        Segment { duration: t_acc, accel: limits.a_acc },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{Trajectory, VehicleState};
    use approx::assert_abs_diff_eq;

    const SEP: f64 = 5.0 + 28.0 / 3.0;

    fn geo() -> RoadGeometry {
        RoadGeometry::uniform(3, 5.0).unwrap()
    }

    fn limits() -> KinematicLimits {
        KinematicLimits::new(20.0, 4.0, 3.0, 5.0).unwrap()
    }

    fn params(window: usize) -> LongHorizonParams {
        LongHorizonParams { range: 600.0, window, delta: 28.0 / 3.0, v_reduction: 1.0, sep: SEP }
    }

    fn snap(list: &[(VehicleId, usize, f64)]) -> EpochSnapshot {
        EpochSnapshot {
            time: 0.0,
            vehicles: list
                .iter()
                .map(|&(id, road, position)| CoopPosition { id, road, position, order_key: position })
                .collect(),
        }
    }

    fn member(id: VehicleId, road: usize, rank: usize, p: f64) -> Member {
        Member { id, road, rank, live: p, eq_pos: p }
    }

    #[test]
    fn lone_vehicle_collects_itself() {
        let s = snap(&[(1, 0, -500.0)]);
        let info = collect_info(1, &RoadOrder::new(&s, 3), &params(6), &geo());
        assert_eq!(info.ids(), vec![1]);
        assert_eq!(info.eq_pos(1), Some(-500.0));
        let opt = solve_order_opt(&info, SEP, &geo());
        assert_eq!(opt[&1], -500.0);
    }

    #[test]
    fn follower_is_clamped_behind_leader() {
        let s = snap(&[(1, 0, -497.0), (2, 0, -500.0)]);
        let info = collect_info(2, &RoadOrder::new(&s, 3), &params(6), &geo());
        assert_eq!(info.ids(), vec![1, 2]);
        assert_eq!(info.eq_pos(1), Some(-497.0));
        assert_abs_diff_eq!(info.eq_pos(2).unwrap(), -497.0 - SEP, epsilon = 1e-12);
    }

    #[test]
    fn window_keeps_nearest_foreign_vehicle() {
        // Ego on road 0 with one far-ahead vehicle on each road.
        let s = snap(&[(1, 0, -600.0), (2, 0, -300.0), (3, 1, -320.0), (4, 2, -310.0)]);
        let info = collect_info(1, &RoadOrder::new(&s, 3), &params(2), &geo());
        assert_eq!(info.ids(), vec![1, 3]);
    }

    #[test]
    fn neighbor_map_uses_initial_order() {
        let s = snap(&[(1, 0, -100.0), (2, 0, -150.0), (3, 1, -140.0), (4, 1, -90.0)]);
        let order = RoadOrder::new(&s, 3);
        let n = order.neighbors(2);
        assert_eq!(n.front, Some(1));
        assert_eq!(n.behind, None);
        assert_eq!(n.cross_nearest, vec![None, Some(3), None]);
    }

    #[test]
    fn slack_constraints_leave_upper_bounds() {
        let info = CollectedInfo { ego: 2, members: vec![member(1, 0, 0, -480.0), member(2, 0, 1, -500.0)] };
        let opt = solve_order_opt(&info, SEP, &geo());
        assert_eq!(opt[&1], -480.0);
        assert_eq!(opt[&2], -500.0);
    }

    #[test]
    fn optimum_prefers_smaller_total_shift() {
        // Two cross-road vehicles 4 m apart: the rear one yields 15.33 m.
        let info = CollectedInfo { ego: 2, members: vec![member(1, 0, 0, -300.0), member(2, 1, 0, -304.0)] };
        let opt = solve_order_opt(&info, SEP, &geo());
        assert_eq!(opt[&1], -300.0);
        assert_abs_diff_eq!(opt[&2], -300.0 - SEP - 5.0, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_examples() {
        let g = geo();
        let same = CollectedInfo { ego: 2, members: vec![member(1, 0, 0, -300.0), member(2, 0, 1, -320.0)] };
        assert_abs_diff_eq!(lemma1_closed_form(&same, SEP, &g).unwrap(), -320.0);
        let cross = CollectedInfo { ego: 2, members: vec![member(1, 1, 0, -300.0), member(2, 0, 0, -308.0)] };
        assert_abs_diff_eq!(lemma1_closed_form(&cross, SEP, &g).unwrap(), -300.0 - SEP - 5.0, epsilon = 1e-12);
        let far = CollectedInfo { ego: 2, members: vec![member(1, 1, 0, 700.0), member(2, 0, 0, -300.0)] };
        assert_abs_diff_eq!(lemma1_closed_form(&far, SEP, &g).unwrap(), -300.0);
        let bad = CollectedInfo { ego: 3, members: vec![member(1, 1, 0, -300.0), member(2, 2, 0, -301.0), member(3, 0, 0, -400.0)] };
        assert!(lemma1_closed_form(&bad, SEP, &g).is_err());
    }

    #[test]
    fn step_examples() {
        let p = params(6);
        let l = limits();
        assert_abs_diff_eq!(long_horizon_step(-500.0, -500.0, &p, &l, 2.0).unwrap().target, -460.0);
        assert_abs_diff_eq!(long_horizon_step(-500.0, -600.0, &p, &l, 2.0).unwrap().target, -462.0);
        assert_abs_diff_eq!(long_horizon_step(-500.0, -501.0, &p, &l, 2.0).unwrap().target, -461.0);
        assert!(long_horizon_step(-500.0, -400.0, &p, &l, 2.0).is_err());
    }

    #[test]
    fn profiles_realize_the_target_at_full_speed() {
        let l = limits();
        for shift in [0.0, 0.3, 1.0, 2.0, 24.0 / 7.0] {
            let segs = shift_profile(shift, 2.0, &l).unwrap();
            let tr = Trajectory::with_segments(0.0, VehicleState::new(-500.0, 20.0), l, &segs).unwrap();
            let end = tr.evaluate(2.0).unwrap();
            assert_abs_diff_eq!(end.position, -460.0 - shift, epsilon = 1e-9);
            assert_abs_diff_eq!(end.velocity, 20.0, epsilon = 1e-9);
        }
        assert!(shift_profile(3.5, 2.0, &l).is_err());
        assert_abs_diff_eq!(max_epoch_shift(2.0, &l), 24.0 / 7.0, epsilon = 1e-12);
        assert!(check_epoch_gap(2.0, 1.0, &l).is_ok());
        assert!(check_epoch_gap(1.0, 1.0, &l).is_err());
    }
}

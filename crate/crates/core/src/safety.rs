//! Conflict predicates, separation and following clearances, and the post-run audit.

use thiserror::Error;

use crate::kinematics::{max_difference, min_difference, RoadGeometry, Trajectory, VehicleId, EPS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SafetyError {
    #[error("vehicles are on roads {0} and {1}, expected the same road")]
    DifferentRoads(usize, usize),
    #[error("both vehicles are on road {0}, expected different roads")]
    SameRoad(usize),
}

/// Interval during which the front bumper lies in (0, length + extent).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub entry: f64,
    pub exit: f64,
}

impl Window {
    pub fn overlaps(&self, other: &Window) -> bool {
        self.entry.max(other.entry) < self.exit.min(other.exit) - EPS
    }
}

/// Zone occupancy window of a trajectory, clipped to `horizon`; intrusions up to `EPS` do not count.
/// `None` if the vehicle never enters.
pub fn occupancy_window(traj: &Trajectory, length: f64, extent: f64, horizon: f64) -> Option<Window> {
    let entry = traj.crossing_time(EPS)?;
    if entry >= horizon {
        return None;
    }
    let exit = traj.reach_time(length + extent).unwrap_or(f64::INFINITY).min(horizon);
    (exit > entry).then_some(Window { entry, exit })
}

pub fn same_road_conflict(
    traj_i: &Trajectory,
    traj_j: &Trajectory,
    road_i: usize,
    road_j: usize,
    extent: f64,
    length_i: f64,
    length_j: f64,
    horizon: f64,
) -> Result<bool, SafetyError> {
    if road_i != road_j {
        return Err(SafetyError::DifferentRoads(road_i, road_j));
    }
    let (Some(wi), Some(wj)) = (
        occupancy_window(traj_i, length_i, extent, horizon),
        occupancy_window(traj_j, length_j, extent, horizon),
    ) else {
        return Ok(false);
    };
    let lo = wi.entry.max(wj.entry);
    let hi = wi.exit.min(wj.exit);
    if lo >= hi - EPS {
        return Ok(false);
    }
    // Both fronts are inside (0, l + d); the bodies overlap iff -l_j < p_i - p_j < l_i.
    let gmin = min_difference(traj_i, traj_j, lo, hi);
    let gmax = max_difference(traj_i, traj_j, lo, hi);
    Ok(gmin < length_i - EPS && gmax > -length_j + EPS)
}

pub fn cross_road_conflict(
    traj_i: &Trajectory,
    traj_j: &Trajectory,
    road_i: usize,
    road_j: usize,
    extent_i: f64,
    extent_j: f64,
    length_i: f64,
    length_j: f64,
    horizon: f64,
) -> Result<bool, SafetyError> {
    if road_i == road_j {
        return Err(SafetyError::SameRoad(road_i));
    }
    Ok(match (
        occupancy_window(traj_i, length_i, extent_i, horizon),
        occupancy_window(traj_j, length_j, extent_j, horizon),
    ) {
        (Some(wi), Some(wj)) => wi.overlaps(&wj),
        _ => false,
    })
}

/// Long-horizon separation between two positions with slack `delta`.
pub fn separation_met(p1: f64, p2: f64, r1: usize, r2: usize, length: f64, delta: f64, geometry: &RoadGeometry) -> bool {
    let cross = r1 != r2;
    let need1 = length + delta + if cross { geometry.extent(r1) } else { 0.0 };
    let need2 = length + delta + if cross { geometry.extent(r2) } else { 0.0 };
    p1 - p2 >= need1 - EPS || p2 - p1 >= need2 - EPS
}

/// Clearance a follower on `follower_road` keeps behind a leader on `leader_road`.
pub fn follow_clearance(length: f64, leader_road: usize, follower_road: usize, geometry: &RoadGeometry) -> f64 {
    if leader_road == follower_road {
        length
    } else {
        length + geometry.extent(leader_road)
    }
}

/// One vehicle as seen by the referee.
#[derive(Debug, Clone)]
pub struct AuditEntry<'a> {
    pub id: VehicleId,
    pub road: usize,
    pub cooperative: bool,
    pub length: f64,
    pub trajectory: &'a Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub first: VehicleId,
    pub second: VehicleId,
    pub same_road: bool,
    pub involves_cooperative: bool,
}

/// Checks every pair of vehicles against both conflict predicates.
pub fn audit(entries: &[AuditEntry<'_>], geometry: &RoadGeometry, horizon: f64) -> Vec<Violation> {
    let windows: Vec<Option<Window>> = entries
        .iter()
        .map(|e| occupancy_window(e.trajectory, e.length, geometry.extent(e.road), horizon))
        .collect();
    let mut order: Vec<usize> = (0..entries.len()).filter(|&i| windows[i].is_some()).collect();
    order.sort_by(|&a, &b| windows[a].unwrap().entry.total_cmp(&windows[b].unwrap().entry));
    let mut out = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        let wi = windows[i].unwrap();
        for &j in &order[k + 1..] {
            let wj = windows[j].unwrap();
            if wj.entry >= wi.exit - EPS {
                break;
            }
            let (a, b) = (&entries[i], &entries[j]);
            let conflict = if a.road == b.road {
                same_road_conflict(a.trajectory, b.trajectory, a.road, b.road, geometry.extent(a.road), a.length, b.length, horizon)
            } else {
                cross_road_conflict(
                    a.trajectory,
                    b.trajectory,
                    a.road,
                    b.road,
                    geometry.extent(a.road),
                    geometry.extent(b.road),
                    a.length,
                    b.length,
                    horizon,
                )
            }
            .expect("road relation checked above");
            if conflict {
                out.push(Violation {
                    first: a.id.min(b.id),
                    second: a.id.max(b.id),
                    same_road: a.road == b.road,
                    involves_cooperative: a.cooperative || b.cooperative,
                });
            }
        }
    }
    out.sort_by_key(|v| (v.first, v.second));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{KinematicLimits, Segment, VehicleState};

    fn limits() -> KinematicLimits {
        KinematicLimits::new(20.0, 4.0, 3.0, 5.0).unwrap()
    }

    fn cruise(p: f64, v: f64) -> Trajectory {
        Trajectory::with_segments(0.0, VehicleState::new(p, v), limits(), &[Segment { duration: f64::INFINITY, accel: 0.0 }]).unwrap()
    }

    fn geo() -> RoadGeometry {
        RoadGeometry::uniform(3, 5.0).unwrap()
    }

    #[test]
    fn same_road_examples() {
        let a = cruise(-20.0, 20.0);
        let b = cruise(-50.0, 20.0);
        assert!(!same_road_conflict(&a, &b, 0, 0, 5.0, 5.0, 5.0, 100.0).unwrap());
        assert!(same_road_conflict(&a, &a, 0, 0, 5.0, 5.0, 5.0, 100.0).unwrap());
        let lead = cruise(-10.0, 20.0);
        let follow = cruise(-14.0, 20.0);
        assert!(same_road_conflict(&lead, &follow, 0, 0, 5.0, 5.0, 5.0, 100.0).unwrap());
        assert!(same_road_conflict(&lead, &follow, 0, 1, 5.0, 5.0, 5.0, 100.0).is_err());
    }

    #[test]
    fn exact_body_contact_is_not_a_conflict() {
        let lead = cruise(-10.0, 20.0);
        let follow = cruise(-15.0, 20.0);
        assert!(!same_road_conflict(&lead, &follow, 0, 0, 5.0, 5.0, 5.0, 100.0).unwrap());
    }

    #[test]
    fn cross_road_examples() {
        // i in its zone during [2, 2.5], j during [4, 4.5].
        let i = cruise(-40.0, 20.0);
        let j = cruise(-80.0, 20.0);
        assert!(!cross_road_conflict(&i, &j, 0, 1, 5.0, 5.0, 5.0, 5.0, 100.0).unwrap());
        let k = cruise(-20.0, 20.0);
        assert!(cross_road_conflict(&k, &k.clone(), 0, 1, 5.0, 5.0, 5.0, 5.0, 100.0).unwrap());
        let parked = cruise(-1.0, 0.0);
        assert!(!cross_road_conflict(&k, &parked, 0, 1, 5.0, 5.0, 5.0, 5.0, 100.0).unwrap());
        assert!(cross_road_conflict(&k, &parked, 0, 0, 5.0, 5.0, 5.0, 5.0, 100.0).is_err());
    }

    #[test]
    fn touching_windows_do_not_conflict() {
        // i exits (front at 10) exactly when j enters.
        let i = cruise(-10.0, 20.0);
        let j = cruise(-20.0, 20.0);
        assert!(!cross_road_conflict(&i, &j, 0, 1, 5.0, 5.0, 5.0, 5.0, 100.0).unwrap());
    }

    #[test]
    fn separation_examples() {
        let g = geo();
        let delta = 9.33;
        assert!(separation_met(19.34, 0.0, 0, 0, 5.0, delta, &g));
        assert!(separation_met(19.34, 0.0, 0, 1, 5.0, delta, &g));
        assert!(!separation_met(19.32, 0.0, 0, 1, 5.0, delta, &g));
        assert!(!separation_met(3.0, 3.0, 0, 0, 5.0, 0.0, &g));
    }

    #[test]
    fn clearance_examples() {
        assert_eq!(follow_clearance(5.0, 0, 0, &geo()), 5.0);
        assert_eq!(follow_clearance(5.0, 0, 1, &geo()), 10.0);
        let g = RoadGeometry::new(vec![7.0, 5.0]).unwrap();
        assert_eq!(follow_clearance(5.0, 0, 1, &g), 12.0);
    }

    #[test]
    fn audit_examples() {
        let g = geo();
        let t = cruise(-30.0, 20.0);
        let single = [AuditEntry { id: 1, road: 0, cooperative: true, length: 5.0, trajectory: &t }];
        assert!(audit(&single, &g, 100.0).is_empty());
        let twin = [
            AuditEntry { id: 1, road: 0, cooperative: true, length: 5.0, trajectory: &t },
            AuditEntry { id: 2, road: 0, cooperative: true, length: 5.0, trajectory: &t },
        ];
        let v = audit(&twin, &g, 100.0);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].first, v[0].second), (1, 2));
        let far = cruise(-100.0, 20.0);
        let apart = [
            AuditEntry { id: 1, road: 0, cooperative: true, length: 5.0, trajectory: &t },
            AuditEntry { id: 2, road: 1, cooperative: true, length: 5.0, trajectory: &far },
        ];
        assert!(audit(&apart, &g, 100.0).is_empty());
    }
}

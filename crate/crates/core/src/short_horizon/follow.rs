//! Committed region and the follower-feasible set.

use crate::kinematics::{advance, KinematicLimits, VehicleState, EPS};

use super::Observation;

pub fn in_region_c(state: VehicleState, limits: &KinematicLimits) -> bool {
    limits.stop_envelope(state) > EPS
}

/// Distance lost against full speed by braking for `s` seconds from speed `w`, then recovering at full acceleration.
fn deficit(w: f64, s: f64, limits: &KinematicLimits) -> f64 {
    let a_m = limits.a_dec;
    let braking = s.min(w / a_m);
    let travelled = w * braking - 0.5 * a_m * braking * braking;
    let w_end = (w - a_m * s).max(0.0);
    let recovery = limits.v_max - w_end;
    limits.v_max * s - travelled + recovery * recovery / (2.0 * limits.a_acc)
}

/// Worst-case gap `p_pred - p_ego - clearance` over all synchronized brake-then-accelerate continuations.
///
/// The predecessor is propagated from its observation by braking until `t1`. If it is then no slower than
/// the ego the gap can only grow; otherwise the ego is never slower and the gap decreases towards its limit,
/// so only the asymptotic value has to be maximized over the switching time.
pub fn follow_margin(
    candidate: VehicleState,
    t1: f64,
    pred: &Observation,
    clearance: f64,
    limits: &KinematicLimits,
    grid: usize,
) -> f64 {
    let lag = (t1 - pred.stamp).max(0.0);
    let leader = advance(pred.state, -limits.a_dec, lag, limits);
    let g1 = leader.position - candidate.position - clearance;
    let (u, v) = (leader.velocity, candidate.velocity);
    if u >= v {
        return g1;
    }
    let a_m = limits.a_dec;
    let h = |s: f64| deficit(u, s, limits) - deficit(v, s, limits);
    let s_stop = v / a_m;
    let mut worst = h(0.0).max(h(u / a_m)).max(h(s_stop));
    // Interior maximum while the leader is already stopped.
    let w_star = limits.v_max * a_m / (a_m + limits.a_acc);
    let s_star = (v - w_star) / a_m;
    if s_star > u / a_m && s_star < s_stop {
        worst = worst.max(h(s_star));
    }
    for k in 1..grid {
        worst = worst.max(h(s_stop * k as f64 / grid as f64));
    }
    g1 - worst
}

pub fn f_fol_member(
    candidate: VehicleState,
    t1: f64,
    pred: Option<(&Observation, f64)>,
    limits: &KinematicLimits,
    grid: usize,
) -> bool {
    if limits.stop_envelope(candidate) > EPS {
        return false;
    }
    match pred {
        None => true,
        Some((obs, clearance)) => follow_margin(candidate, t1, obs, clearance, limits, grid) >= -EPS,
    }
}

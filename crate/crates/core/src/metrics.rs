//! Relative scheduling cost and fleet statistics.

use thiserror::Error;

use crate::engine::{SimResult, VehicleRecord};
use crate::kinematics::{Trajectory, Vehicle, EPS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("time {t} lies outside the log [{start}, {end}]")]
    OutsideLog { t: f64, start: f64, end: f64 },
}

/// Distance lost against the ideal full-speed trajectory, counting the distance still needed to
/// recover full speed. `t0` is absolute simulation time.
pub fn relative_cost(vehicle: &Vehicle, t0: f64, log: &Trajectory) -> Result<f64, MetricsError> {
    let start = vehicle.spawn_time;
    if t0 < start - EPS || t0.is_nan() || t0.is_infinite() {
        return Err(MetricsError::OutsideLog { t: t0, start, end: log.end_time() });
    }
    let s = log.state_at(t0.max(start));
    let l = &vehicle.limits;
    let recovery = l.v_max - s.velocity;
    Ok(vehicle.spawn_position + l.v_max * (t0 - start) - s.position + recovery * recovery / (2.0 * l.a_acc))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FleetStats {
    pub mean_cost: f64,
    pub throughput: f64,
    pub count: usize,
    pub cleared: usize,
}

/// When each vehicle's cost is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvaluationRule {
    /// At its own clearance time, or at the end of the run if it never cleared.
    #[default]
    Clearance,
    /// At the end of the run for everyone.
    RunEnd,
}

fn evaluation_time(r: &VehicleRecord, rule: EvaluationRule, end: f64) -> f64 {
    match rule {
        EvaluationRule::Clearance => r.clearance_time.unwrap_or(end),
        EvaluationRule::RunEnd => end,
    }
}

/// Mean cost over cooperative vehicles and cooperative clearances per second, where the span is
/// the last cooperative clearance time.
pub fn fleet_stats(result: &SimResult, rule: EvaluationRule) -> FleetStats {
    let coop: Vec<&VehicleRecord> = result.vehicles.iter().filter(|r| r.vehicle.cooperative).collect();
    if coop.is_empty() {
        return FleetStats::default();
    }
    let total: f64 = coop
        .iter()
        .map(|r| {
            let t = evaluation_time(r, rule, result.end_time);
            relative_cost(&r.vehicle, t, &r.log).expect("evaluation times follow the spawn")
        })
        .sum();
    let clear_times: Vec<f64> = coop.iter().filter_map(|r| r.clearance_time).collect();
    let span = clear_times.iter().cloned().fold(0.0, f64::max);
    let throughput = if span > 0.0 { clear_times.len() as f64 / span } else { 0.0 };
    FleetStats { mean_cost: total / coop.len() as f64, throughput, count: coop.len(), cleared: clear_times.len() }
}

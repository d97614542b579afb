//! Near-intersection planning: committed region, follower-feasible set, minimax target selection,
//! and the single-vehicle minimax baseline.

pub mod follow;
pub mod minimax;
pub mod policy;

pub use follow::{f_fol_member, follow_margin, in_region_c};
pub use minimax::{minimax_select, minimax_value, AdversaryView, CostReference, OccupancyTable, ScenarioSet};
pub use policy::{algorithm2_step, baseline_minimax_step, best_safe_trajectory, candidate_accels, Branch, Decision};

use crate::kinematics::{KinematicLimits, VehicleId, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub subject: VehicleId,
    pub state: VehicleState,
    pub stamp: f64,
}

/// Position of an uncertain vehicle relative to the ego.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    CrossRoad,
    Leading,
    Trailing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adversary {
    pub obs: Observation,
    pub limits: KinematicLimits,
    /// Front position at which its rear leaves the zone: length + extent of its road.
    pub zone_end: f64,
    pub relation: Relation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Predecessor {
    pub obs: Observation,
    pub clearance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Knowledge {
    pub predecessor: Option<Predecessor>,
    pub adversaries: Vec<Adversary>,
}

impl Knowledge {
    pub fn first_in_order(&self) -> bool {
        self.predecessor.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShortHorizonParams {
    pub range: f64,
    pub decision_gap: f64,
    pub tau: f64,
    pub candidate_grid: usize,
    pub t_d_grid: usize,
    /// Uncertain vehicles whose two extremes are enumerated; the rest play full acceleration.
    pub max_enumerated: usize,
    /// Look-ahead after which a blocked rollout is cut off.
    pub value_horizon: f64,
}

impl Default for ShortHorizonParams {
    fn default() -> Self {
        Self {
            range: 200.0,
            decision_gap: 0.1,
            tau: 0.1,
            candidate_grid: 25,
            t_d_grid: 64,
            max_enumerated: 5,
            value_horizon: 120.0,
        }
    }
}

/// The deciding vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ego {
    pub id: VehicleId,
    pub limits: KinematicLimits,
    pub zone_end: f64,
    pub cost: CostReference,
    pub state: VehicleState,
}

//! Vehicle types, road geometry and exact piecewise-constant-acceleration trajectories.

use thiserror::Error;

/// Tolerance used for position and time comparisons throughout the policies.
pub const EPS: f64 = 1e-9;

pub type VehicleId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("time {t} precedes trajectory origin {origin}")]
    BeforeOrigin { t: f64, origin: f64 },
    #[error("acceleration {accel} outside [-{a_dec}, {a_acc}]")]
    AccelOutOfBounds { accel: f64, a_dec: f64, a_acc: f64 },
    #[error("segment duration {0} is negative or not a number")]
    BadDuration(f64),
    #[error("cannot extend a trajectory that already runs forever")]
    Unbounded,
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid limits: {0}")]
    Limits(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadGeometry {
    extents: Vec<f64>,
}

impl RoadGeometry {
    pub fn new(extents: Vec<f64>) -> Result<Self, KinematicsError> {
        if extents.len() < 2 {
            return Err(KinematicsError::Geometry(format!(
                "need at least 2 roads, got {}",
                extents.len()
            )));
        }
        if let Some(d) = extents.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
            return Err(KinematicsError::Geometry(format!("extent {d} must be positive")));
        }
        Ok(Self { extents })
    }

    pub fn uniform(roads: usize, extent: f64) -> Result<Self, KinematicsError> {
        Self::new(vec![extent; roads])
    }

    pub fn road_count(&self) -> usize {
        self.extents.len()
    }

    pub fn extent(&self, road: usize) -> f64 {
        self.extents[road]
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents
    }

    pub fn max_extent(&self) -> f64 {
        self.extents.iter().cloned().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicLimits {
    pub v_max: f64,
    pub a_dec: f64,
    pub a_acc: f64,
    pub length: f64,
}

impl KinematicLimits {
    pub fn new(v_max: f64, a_dec: f64, a_acc: f64, length: f64) -> Result<Self, KinematicsError> {
        for (name, x) in [("v_max", v_max), ("a_dec", a_dec), ("a_acc", a_acc), ("length", length)] {
            if !(x > 0.0) || !x.is_finite() {
                return Err(KinematicsError::Limits(format!("{name} = {x} must be positive")));
            }
        }
        Ok(Self { v_max, a_dec, a_acc, length })
    }

    /// Minimum front position reachable by braking at full deceleration.
    pub fn stop_envelope(&self, s: VehicleState) -> f64 {
        s.position + s.velocity * s.velocity / (2.0 * self.a_dec)
    }

    pub fn check_accel(&self, accel: f64) -> Result<(), KinematicsError> {
        if accel < -self.a_dec - EPS || accel > self.a_acc + EPS || accel.is_nan() {
            return Err(KinematicsError::AccelOutOfBounds {
                accel,
                a_dec: self.a_dec,
                a_acc: self.a_acc,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub position: f64,
    pub velocity: f64,
}

impl VehicleState {
    pub fn new(position: f64, velocity: f64) -> Self {
        Self { position, velocity }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: VehicleId,
    pub road: usize,
    pub cooperative: bool,
    pub limits: KinematicLimits,
    pub spawn_time: f64,
    pub spawn_position: f64,
}

impl Vehicle {
    /// Position the vehicle would have had at time 0 travelling at full speed: p_i(0).
    pub fn initial_position(&self) -> f64 {
        self.spawn_position - self.limits.v_max * self.spawn_time
    }

    pub fn spawn_state(&self) -> VehicleState {
        VehicleState::new(self.spawn_position, self.limits.v_max)
    }
}

/// A commanded piece of motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub duration: f64,
    pub accel: f64,
}

/// A normalized piece: constant effective acceleration, no saturation inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub start: f64,
    pub state: VehicleState,
    pub accel: f64,
    pub duration: f64,
}

impl Piece {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    pub fn at(&self, tau: f64) -> VehicleState {
        VehicleState {
            position: self.state.position + self.state.velocity * tau + 0.5 * self.accel * tau * tau,
            velocity: self.state.velocity + self.accel * tau,
        }
    }

    /// Smallest offset tau in [0, duration] at which position reaches `x`, if any.
    /// Assumes the piece starts at or before `x`.
    fn reach_offset(&self, x: f64) -> Option<f64> {
        let dx = x - self.state.position;
        if dx <= 0.0 {
            return Some(0.0);
        }
        let v = self.state.velocity;
        let a = self.accel;
        let tau = if a == 0.0 {
            if v <= 0.0 {
                return None;
            }
            dx / v
        } else {
            let disc = v * v + 2.0 * a * dx;
            if disc < 0.0 {
                return None;
            }
            let den = v + disc.sqrt();
            if den <= 0.0 {
                return None;
            }
            2.0 * dx / den
        };
        (tau <= self.duration).then_some(tau.min(self.duration))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    origin_time: f64,
    origin_state: VehicleState,
    limits: KinematicLimits,
    segments: Vec<Segment>,
    /// Start time and first piece of each segment.
    marks: Vec<(f64, usize)>,
    pieces: Vec<Piece>,
}

impl Trajectory {
    pub fn new(origin_time: f64, origin_state: VehicleState, limits: KinematicLimits) -> Self {
        let v = origin_state.velocity.clamp(0.0, limits.v_max);
        Self {
            origin_time,
            origin_state: VehicleState::new(origin_state.position, v),
            limits,
            segments: Vec::new(),
            marks: Vec::new(),
            pieces: Vec::new(),
        }
    }

    pub fn with_segments(
        origin_time: f64,
        origin_state: VehicleState,
        limits: KinematicLimits,
        segments: &[Segment],
    ) -> Result<Self, KinematicsError> {
        let mut traj = Self::new(origin_time, origin_state, limits);
        for seg in segments {
            traj.push_segment(*seg)?;
        }
        Ok(traj)
    }

    /// Single unbounded segment at full acceleration or full braking.
    pub fn extreme(origin_time: f64, state: VehicleState, limits: KinematicLimits, mode: ExtremeMode) -> Self {
        let accel = match mode {
            ExtremeMode::MaxAccel => limits.a_acc,
            ExtremeMode::MinAccel => -limits.a_dec,
        };
        let mut traj = Self::new(origin_time, state, limits);
        traj.push_segment(Segment { duration: f64::INFINITY, accel })
            .expect("fresh trajectory accepts an extreme segment");
        traj
    }

    pub fn origin_time(&self) -> f64 {
        self.origin_time
    }

    pub fn origin_state(&self) -> VehicleState {
        self.origin_state
    }

    pub fn limits(&self) -> &KinematicLimits {
        &self.limits
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Time at which the commanded segments run out (infinite if the last one is unbounded).
    pub fn end_time(&self) -> f64 {
        self.pieces.last().map_or(self.origin_time, Piece::end)
    }

    pub fn end_state(&self) -> VehicleState {
        match self.pieces.last() {
            None => self.origin_state,
            Some(p) if p.duration.is_infinite() => p.at(0.0),
            Some(p) => self.finish(p),
        }
    }

    pub fn is_unbounded(&self) -> bool {
        self.end_time().is_infinite()
    }

    fn finish(&self, p: &Piece) -> VehicleState {
        let mut s = p.at(p.duration);
        s.velocity = s.velocity.clamp(0.0, self.limits.v_max);
        s
    }

    pub fn push_segment(&mut self, seg: Segment) -> Result<(), KinematicsError> {
        if seg.duration.is_nan() || seg.duration < 0.0 {
            return Err(KinematicsError::BadDuration(seg.duration));
        }
        self.limits.check_accel(seg.accel)?;
        if self.is_unbounded() {
            return Err(KinematicsError::Unbounded);
        }
        let accel = seg.accel.clamp(-self.limits.a_dec, self.limits.a_acc);
        self.segments.push(Segment { duration: seg.duration, accel });
        self.marks.push((self.end_time(), self.pieces.len()));
        if seg.duration == 0.0 {
            return Ok(());
        }
        let start = self.end_time();
        let state = self.end_state();
        self.append_pieces(start, state, accel, seg.duration);
        Ok(())
    }

    fn append_pieces(&mut self, start: f64, state: VehicleState, accel: f64, duration: f64) {
        let v_max = self.limits.v_max;
        let (sat_time, sat_velocity) = if accel > 0.0 && state.velocity < v_max {
            ((v_max - state.velocity) / accel, v_max)
        } else if accel < 0.0 && state.velocity > 0.0 {
            (state.velocity / -accel, 0.0)
        } else {
            (0.0, state.velocity)
        };
        if sat_time >= duration {
            self.pieces.push(Piece { start, state, accel, duration });
            return;
        }
        if sat_time > 0.0 {
            self.pieces.push(Piece { start, state, accel, duration: sat_time });
        }
        let mut held = if sat_time > 0.0 {
            self.pieces.last().unwrap().at(sat_time)
        } else {
            state
        };
        held.velocity = sat_velocity;
        let rest = if duration.is_infinite() { f64::INFINITY } else { duration - sat_time };
        self.pieces.push(Piece { start: start + sat_time, state: held, accel: 0.0, duration: rest });
    }

    /// Keeps the motion on [origin, t] and drops everything after `t`.
    pub fn truncate(&mut self, t: f64) {
        if t >= self.end_time() {
            return;
        }
        let kept = self.marks.partition_point(|m| m.0 < t);
        if kept == 0 {
            self.segments.clear();
            self.marks.clear();
            self.pieces.clear();
            return;
        }
        let (start, first_piece) = self.marks[kept - 1];
        let last = Segment { duration: self.segments[kept - 1].duration.min(t - start), accel: self.segments[kept - 1].accel };
        self.segments.truncate(kept - 1);
        self.marks.truncate(kept - 1);
        self.pieces.truncate(first_piece);
        self.push_segment(last).expect("segments were valid already");
    }

    fn piece_index(&self, t: f64) -> Option<usize> {
        let idx = self.pieces.partition_point(|p| p.start <= t);
        idx.checked_sub(1)
    }

    pub fn evaluate(&self, t: f64) -> Result<VehicleState, KinematicsError> {
        if t < self.origin_time - EPS {
            return Err(KinematicsError::BeforeOrigin { t, origin: self.origin_time });
        }
        Ok(self.state_at(t.max(self.origin_time)))
    }

    /// Evaluation without the domain check; times before the origin return the origin state.
    pub fn state_at(&self, t: f64) -> VehicleState {
        let Some(i) = self.piece_index(t) else {
            return self.origin_state;
        };
        let p = &self.pieces[i];
        if t <= p.end() {
            let mut s = p.at(t - p.start);
            s.velocity = s.velocity.clamp(0.0, self.limits.v_max);
            return s;
        }
        let end = self.finish(p);
        VehicleState::new(end.position + end.velocity * (t - p.end()), end.velocity)
    }

    pub fn position_at(&self, t: f64) -> f64 {
        self.state_at(t).position
    }

    /// First time the front reaches `x` (position >= x); `None` if never.
    pub fn reach_time(&self, x: f64) -> Option<f64> {
        if self.origin_state.position >= x {
            return Some(self.origin_time);
        }
        for p in &self.pieces {
            if let Some(tau) = p.reach_offset(x) {
                return Some(p.start + tau);
            }
        }
        let end = self.end_state();
        if self.is_unbounded() || end.velocity <= 0.0 {
            return None;
        }
        Some(self.end_time() + (x - end.position) / end.velocity)
    }

    /// Infimum of times at which the front is strictly beyond `x`; `None` if never.
    pub fn crossing_time(&self, x: f64) -> Option<f64> {
        let t = self.reach_time(x)?;
        let s = self.state_at(t);
        if s.position > x || s.velocity > 0.0 {
            return Some(t);
        }
        // Stationary exactly at x: look for the next instant the vehicle moves again.
        let i = self.piece_index(t).unwrap_or(0);
        for p in &self.pieces[i..] {
            if p.start > t && (p.state.velocity > 0.0 || p.accel > 0.0) {
                return Some(p.start);
            }
            if p.start <= t && p.accel > 0.0 {
                return Some(t);
            }
        }
        None
    }

    /// Times at which the piecewise description changes, restricted to (lo, hi).
    pub fn breakpoints(&self, lo: f64, hi: f64) -> impl Iterator<Item = f64> + '_ {
        self.pieces
            .iter()
            .flat_map(|p| [p.start, p.end()])
            .filter(move |t| *t > lo && *t < hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtremeMode {
    MaxAccel,
    MinAccel,
}

pub fn stop_envelope(state: VehicleState, limits: &KinematicLimits) -> f64 {
    limits.stop_envelope(state)
}

pub fn extreme_trajectory(state: VehicleState, mode: ExtremeMode, origin_time: f64, limits: KinematicLimits) -> Trajectory {
    Trajectory::extreme(origin_time, state, limits, mode)
}

/// State after `dt` of constant acceleration `accel` with velocity saturation.
pub fn advance(state: VehicleState, accel: f64, dt: f64, limits: &KinematicLimits) -> VehicleState {
    let v = state.velocity;
    let sat = if accel > 0.0 && v < limits.v_max {
        (limits.v_max - v) / accel
    } else if accel < 0.0 && v > 0.0 {
        v / -accel
    } else {
        0.0
    };
    if dt <= sat {
        return VehicleState::new(state.position + v * dt + 0.5 * accel * dt * dt, v + accel * dt);
    }
    let held = if accel > 0.0 && v < limits.v_max {
        limits.v_max
    } else if accel < 0.0 && v > 0.0 {
        0.0
    } else {
        v
    };
    let p_sat = state.position + v * sat + 0.5 * accel * sat * sat;
    VehicleState::new(p_sat + held * (dt - sat), held)
}

/// Minimum of `a(t) - b(t) + offset` over `[lo, hi]`, evaluated exactly on the merged piece grid.
pub fn min_difference(a: &Trajectory, b: &Trajectory, lo: f64, hi: f64) -> f64 {
    extremum_difference(a, b, lo, hi, false)
}

/// Maximum of `a(t) - b(t)` over `[lo, hi]`.
pub fn max_difference(a: &Trajectory, b: &Trajectory, lo: f64, hi: f64) -> f64 {
    extremum_difference(a, b, lo, hi, true)
}

fn extremum_difference(a: &Trajectory, b: &Trajectory, lo: f64, hi: f64, maximize: bool) -> f64 {
    let f = |t: f64| a.position_at(t) - b.position_at(t);
    let better = |x: f64, y: f64| if maximize { x.max(y) } else { x.min(y) };
    let mut cuts: Vec<f64> = a.breakpoints(lo, hi).chain(b.breakpoints(lo, hi)).collect();
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut best = f(lo);
    for w in cuts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        best = better(best, f(t1));
        // Quadratic on this sub-interval: stationary point of the relative motion.
        let mid = 0.5 * (t0 + t1);
        let sa = a.state_at(mid);
        let sb = b.state_at(mid);
        let acc = accel_at(a, mid) - accel_at(b, mid);
        if acc != 0.0 {
            let rel_v_mid = sa.velocity - sb.velocity;
            let t_star = mid - rel_v_mid / acc;
            let interior_is_extremum = if maximize { acc < 0.0 } else { acc > 0.0 };
            if interior_is_extremum && t_star > t0 && t_star < t1 {
                best = better(best, f(t_star));
            }
        }
    }
    best
}

fn accel_at(traj: &Trajectory, t: f64) -> f64 {
    match traj.piece_index(t) {
        Some(i) if t < traj.pieces[i].end() => traj.pieces[i].accel,
        _ => 0.0,
    }
}

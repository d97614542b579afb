//! Experiment configuration and its flat `key = value` text format.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::kinematics::{KinematicLimits, RoadGeometry};
use crate::long_horizon::check_epoch_gap;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {value}")]
    BadValue { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BehaviorKind {
    ConstantSpeed,
    BrakingPulse,
    RandomBounded,
    Mixed,
}

impl BehaviorKind {
    pub fn name(self) -> &'static str {
        match self {
            BehaviorKind::ConstantSpeed => "constant_speed",
            BehaviorKind::BrakingPulse => "braking_pulse",
            BehaviorKind::RandomBounded => "random_bounded",
            BehaviorKind::Mixed => "mixed",
        }
    }
}

impl FromStr for BehaviorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "constant_speed" => BehaviorKind::ConstantSpeed,
            "braking_pulse" => BehaviorKind::BrakingPulse,
            "random_bounded" => BehaviorKind::RandomBounded,
            "mixed" => BehaviorKind::Mixed,
            other => return Err(format!("unknown behavior `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub roads: usize,
    pub d: Vec<f64>,
    pub l: f64,
    pub v_max: f64,
    pub a_dec: f64,
    pub a_acc: f64,
    pub v_r: f64,
    pub a_range: f64,
    pub b_range: f64,
    pub window: usize,
    pub delta: f64,
    pub tau: f64,
    pub mu: f64,
    pub epoch_gap: f64,
    pub tick_gap: f64,
    pub lambda_coop: f64,
    pub lambda_noncoop: f64,
    pub noncoop_behavior: BehaviorKind,
    pub horizon: f64,
    pub seed: u64,
    /// Upper bound of the uniform delay on observations of non-cooperative vehicles.
    pub noncoop_obs_delay: f64,
}

/// Minimum slack under which a fully cooperative, well-spaced fleet never slows down.
pub fn delta_star(v_max: f64, tau: f64, mu: f64, a_dec: f64, a_acc: f64) -> f64 {
    v_max * (tau + mu) * (1.0 + a_dec / a_acc)
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let (v_max, a_dec, a_acc, tau, mu) = (20.0, 4.0, 3.0, 0.1, 0.1);
        Self {
            roads: 3,
            d: vec![5.0; 3],
            l: 5.0,
            v_max,
            a_dec,
            a_acc,
            v_r: 1.0,
            a_range: 600.0,
            b_range: 200.0,
            window: 6,
            delta: delta_star(v_max, tau, mu, a_dec, a_acc),
            tau,
            mu,
            epoch_gap: 2.0,
            tick_gap: 0.1,
            lambda_coop: 0.6,
            lambda_noncoop: 0.0,
            noncoop_behavior: BehaviorKind::ConstantSpeed,
            horizon: 100.0,
            seed: 1,
            noncoop_obs_delay: tau,
        }
    }
}

const KEYS: [&str; 21] = [
    "roads",
    "d",
    "l",
    "v_max",
    "a_dec",
    "a_acc",
    "v_R",
    "A",
    "B",
    "W",
    "delta",
    "tau",
    "mu",
    "epoch_gap",
    "tick_gap",
    "lambda_coop",
    "lambda_noncoop",
    "noncoop_behavior",
    "horizon",
    "seed",
    "noncoop_obs_delay",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })
}

impl ScenarioConfig {
    pub fn limits(&self) -> KinematicLimits {
        KinematicLimits { v_max: self.v_max, a_dec: self.a_dec, a_acc: self.a_acc, length: self.l }
    }

    pub fn geometry(&self) -> RoadGeometry {
        RoadGeometry::new(self.d.clone()).expect("validated configuration")
    }

    pub fn delta_star(&self) -> f64 {
        delta_star(self.v_max, self.tau, self.mu, self.a_dec, self.a_acc)
    }

    /// Smallest short-horizon length for which the safety guarantee applies.
    pub fn b_bound(&self) -> f64 {
        let max_d = self.d.iter().cloned().fold(0.0, f64::max);
        self.v_max * self.v_max / self.a_dec + self.v_max * self.v_max / (2.0 * self.a_acc) + self.l + max_d
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.roads < 2 {
            return bad(format!("roads = {} must be at least 2", self.roads));
        }
        if self.d.len() != self.roads {
            return bad(format!("{} extents given for {} roads", self.d.len(), self.roads));
        }
        KinematicLimits::new(self.v_max, self.a_dec, self.a_acc, self.l).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        RoadGeometry::new(self.d.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let positive = [
            ("v_R", self.v_r),
            ("B", self.b_range),
            ("tau", self.tau),
            ("mu", self.mu),
            ("epoch_gap", self.epoch_gap),
            ("tick_gap", self.tick_gap),
            ("horizon", self.horizon),
        ];
        for (k, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{k} = {v} must be positive"));
            }
        }
        let non_negative = [
            ("A", self.a_range),
            ("delta", self.delta),
            ("lambda_coop", self.lambda_coop),
            ("lambda_noncoop", self.lambda_noncoop),
            ("noncoop_obs_delay", self.noncoop_obs_delay),
        ];
        for (k, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{k} = {v} must be non-negative"));
            }
        }
        if self.v_r >= self.v_max {
            return bad(format!("v_R = {} must be below v_max", self.v_r));
        }
        if !(1..=10).contains(&self.window) {
            return bad(format!("W = {} must lie in 1..=10", self.window));
        }
        if self.tick_gap > self.mu + 1e-12 {
            return bad(format!("tick_gap = {} exceeds its bound mu = {}", self.tick_gap, self.mu));
        }
        check_epoch_gap(self.epoch_gap, self.v_r, &self.limits()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut delta_given = false;
        let mut obs_delay_given = false;
        let mut d_given: Option<Vec<f64>> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: n + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "roads" => cfg.roads = parse_num(key, value)?,
                "d" => {
                    let list = value
                        .split(',')
                        .map(|x| parse_num::<f64>(key, x.trim()))
                        .collect::<Result<Vec<_>, _>>()?;
                    d_given = Some(list);
                }
                "l" => cfg.l = parse_num(key, value)?,
                "v_max" => cfg.v_max = parse_num(key, value)?,
                "a_dec" => cfg.a_dec = parse_num(key, value)?,
                "a_acc" => cfg.a_acc = parse_num(key, value)?,
                "v_R" => cfg.v_r = parse_num(key, value)?,
                "A" => cfg.a_range = parse_num(key, value)?,
                "B" => cfg.b_range = parse_num(key, value)?,
                "W" => cfg.window = parse_num(key, value)?,
                "delta" => {
                    cfg.delta = parse_num(key, value)?;
                    delta_given = true;
                }
                "tau" => cfg.tau = parse_num(key, value)?,
                "mu" => cfg.mu = parse_num(key, value)?,
                "epoch_gap" => cfg.epoch_gap = parse_num(key, value)?,
                "tick_gap" => cfg.tick_gap = parse_num(key, value)?,
                "lambda_coop" => cfg.lambda_coop = parse_num(key, value)?,
                "lambda_noncoop" => cfg.lambda_noncoop = parse_num(key, value)?,
                "noncoop_behavior" => {
                    cfg.noncoop_behavior = value
                        .parse()
                        .map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })?
                }
                "horizon" => cfg.horizon = parse_num(key, value)?,
                "seed" => cfg.seed = parse_num(key, value)?,
                "noncoop_obs_delay" => {
                    cfg.noncoop_obs_delay = parse_num(key, value)?;
                    obs_delay_given = true;
                }
                other => return Err(ConfigError::UnknownKey(other.into())),
            }
        }
        cfg.d = match d_given {
            Some(list) if list.len() == 1 => vec![list[0]; cfg.roads],
            Some(list) => list,
            None => vec![5.0; cfg.roads],
        };
        if !delta_given {
            cfg.delta = cfg.delta_star();
        }
        if !obs_delay_given {
            cfg.noncoop_obs_delay = cfg.tau;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Writes every key explicitly; `parse(serialize(c)) == c` for valid configurations.
    pub fn serialize(&self) -> String {
        let d = self.d.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let mut out = String::new();
        let values: [String; 21] = [
            self.roads.to_string(),
            d,
            format!("{:?}", self.l),
            format!("{:?}", self.v_max),
            format!("{:?}", self.a_dec),
            format!("{:?}", self.a_acc),
            format!("{:?}", self.v_r),
            format!("{:?}", self.a_range),
            format!("{:?}", self.b_range),
            self.window.to_string(),
            format!("{:?}", self.delta),
            format!("{:?}", self.tau),
            format!("{:?}", self.mu),
            format!("{:?}", self.epoch_gap),
            format!("{:?}", self.tick_gap),
            format!("{:?}", self.lambda_coop),
            format!("{:?}", self.lambda_noncoop),
            self.noncoop_behavior.name().to_string(),
            format!("{:?}", self.horizon),
            self.seed.to_string(),
            format!("{:?}", self.noncoop_obs_delay),
        ];
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

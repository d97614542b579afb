//! Experiment commands behind the command-line tool: single runs, parameter sweeps and the
//! verification suites. Each returns a process exit code.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};
use crate::engine::{run, Policy, SimResult};
use crate::metrics::{fleet_stats, EvaluationRule};
use crate::traffic::{generate_scenario, Scenario};
use crate::verify::{run_suite, Suite};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const SUMMARY_HEADER: [&str; 13] = [
    "scenario_id",
    "seed",
    "policy",
    "A",
    "B",
    "W",
    "lambda_coop",
    "lambda_noncoop",
    "n_coop",
    "n_noncoop",
    "mean_cost_m",
    "throughput_per_s",
    "violations",
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: io::Error },
    #[error("cannot write output: {0}")]
    Write(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
}

/// `x` with 9 significant digits, in the style of C's `%.9g`.
pub fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    // The exponent after rounding to 9 digits decides between fixed and scientific notation.
    let sci = format!("{:.8e}", x);
    let (mantissa, e) = sci.split_once('e').expect("scientific format");
    let exp: i32 = e.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        trim_zeros(&format!("{:.*}", (8 - exp) as usize, x)).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// One completed run reduced to the summary columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub scenario_id: usize,
    pub seed: u64,
    pub policy: Policy,
    pub config: ScenarioConfig,
    pub n_coop: usize,
    pub n_noncoop: usize,
    pub mean_cost: f64,
    pub throughput: f64,
    pub violations: usize,
}

impl Summary {
    pub fn new(scenario_id: usize, scenario: &Scenario, result: &SimResult) -> Self {
        let stats = fleet_stats(result, EvaluationRule::Clearance);
        Self {
            scenario_id,
            seed: scenario.seed,
            policy: result.policy,
            config: scenario.config.clone(),
            n_coop: scenario.coop_count(),
            n_noncoop: scenario.noncoop_count(),
            mean_cost: stats.mean_cost,
            throughput: stats.throughput,
            violations: result.cooperative_violations(),
        }
    }

    fn fields(&self) -> Vec<String> {
        let c = &self.config;
        vec![
            self.scenario_id.to_string(),
            self.seed.to_string(),
            self.policy.name().to_string(),
            sig9(c.a_range),
            sig9(c.b_range),
            c.window.to_string(),
            sig9(c.lambda_coop),
            sig9(c.lambda_noncoop),
            self.n_coop.to_string(),
            self.n_noncoop.to_string(),
            sig9(self.mean_cost),
            sig9(self.throughput),
            self.violations.to_string(),
        ]
    }
}

fn warn_short_b(config: &ScenarioConfig, err: &mut dyn Write) {
    let bound = config.b_bound();
    if config.b_range < bound {
        let _ = writeln!(
            err,
            "warning: B = {} is below the safety bound {:.2}; cooperative safety is not guaranteed",
            config.b_range, bound
        );
    }
}

fn open_output(out: Option<&Path>) -> Result<Box<dyn Write>, HarnessError> {
    Ok(match out {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Read { path: path.display().to_string(), source })?;
    Ok(ScenarioConfig::parse(&text)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub config: ScenarioConfig,
    /// Overrides the seed in the configuration.
    pub seed: Option<u64>,
    pub policy: Policy,
}

/// Runs one scenario; writes the summary CSV and, when asked, the sampled trajectories.
pub fn run_once(
    opts: &RunOptions,
    out: &mut dyn Write,
    trajectories: Option<&mut dyn Write>,
    err: &mut dyn Write,
) -> Result<usize, HarnessError> {
    let seed = opts.seed.unwrap_or(opts.config.seed);
    warn_short_b(&opts.config, err);
    let scenario = generate_scenario(&opts.config, seed)?;
    let result = run(&scenario, opts.policy);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    if !scenario.vehicles.is_empty() {
        w.write_record(Summary::new(0, &scenario, &result).fields())?;
    }
    w.flush()?;
    if let Some(t) = trajectories {
        write_trajectories(&result, opts.config.tick_gap, t)?;
    }
    Ok(result.cooperative_violations())
}

/// Position and velocity of every vehicle on the decision tick grid until it clears.
pub fn write_trajectories(result: &SimResult, step: f64, out: &mut dyn Write) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vehicle", "cooperative", "road", "time", "position", "velocity"])?;
    for r in &result.vehicles {
        let end = r.clearance_time.unwrap_or(result.end_time);
        let start = r.vehicle.spawn_time;
        let mut k = 0u64;
        loop {
            let t = (start + k as f64 * step).min(end);
            let s = r.log.state_at(t);
            w.write_record([
                r.vehicle.id.to_string(),
                r.vehicle.cooperative.to_string(),
                r.vehicle.road.to_string(),
                sig9(t),
                sig9(s.position),
                sig9(s.velocity),
            ])?;
            if t >= end {
                break;
            }
            k += 1;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_run(opts: &RunOptions, out: Option<&Path>, trajectories: Option<&Path>) -> i32 {
    let mut err = io::stderr();
    let outcome = (|| {
        let mut o = open_output(out)?;
        let mut t = trajectories.map(fs::File::create).transpose()?.map(io::BufWriter::new);
        let n = run_once(opts, &mut o, t.as_mut().map(|w| w as &mut dyn Write), &mut err)?;
        o.flush()?;
        if let Some(w) = t.as_mut() {
            w.flush()?;
        }
        Ok::<_, HarnessError>(n)
    })();
    match outcome {
        Ok(0) => EXIT_OK,
        Ok(n) => {
            let _ = writeln!(err, "{n} safety violations involve cooperative vehicles");
            EXIT_VIOLATION
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

/// Grid of a sweep: every combination of the listed values, with `base` supplying the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    pub a_range: Vec<f64>,
    pub window: Vec<usize>,
    pub lambda_coop: Vec<f64>,
    pub lambda_noncoop: Vec<f64>,
    pub policies: Vec<Policy>,
    pub replications: usize,
    pub first_seed: u64,
}

impl SweepSpec {
    /// Grid points in row order: A, then W, then the two rates, then the policy.
    pub fn points(&self) -> Vec<(ScenarioConfig, Policy)> {
        let mut out = Vec::new();
        for &a in &self.a_range {
            for &w in &self.window {
                for &lc in &self.lambda_coop {
                    for &ln in &self.lambda_noncoop {
                        for &p in &self.policies {
                            let config = ScenarioConfig {
                                a_range: a,
                                window: w,
                                lambda_coop: lc,
                                lambda_noncoop: ln,
                                ..self.base.clone()
                            };
                            out.push((config, p));
                        }
                    }
                }
            }
        }
        out
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs every (grid point, seed) pair; summaries come back in grid-then-seed order.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<Vec<Summary>>, HarnessError> {
    let points = spec.points();
    if points.is_empty() || spec.replications == 0 {
        return Err(HarnessError::Usage("the sweep grid is empty".into()));
    }
    for (config, _) in &points {
        config.validate()?;
    }
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|g| (0..spec.replications as u64).map(move |k| (g, spec.first_seed + k)))
        .collect();
    let rows: Vec<Summary> = jobs
        .par_iter()
        .map(|&(g, seed)| {
            let (config, policy) = &points[g];
            let scenario = generate_scenario(config, seed).expect("validated above");
            Summary::new(g, &scenario, &run(&scenario, *policy))
        })
        .collect();
    Ok(rows.chunks(spec.replications).map(<[Summary]>::to_vec).collect())
}

pub fn write_sweep(groups: &[Vec<Summary>], out: &mut dyn Write) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = vec!["kind"];
    header.extend(SUMMARY_HEADER);
    header.extend(["mean_cost_se", "throughput_se"]);
    w.write_record(&header)?;
    for group in groups {
        for s in group {
            let mut rec = vec!["run".to_string()];
            rec.extend(s.fields());
            rec.extend([String::new(), String::new()]);
            w.write_record(&rec)?;
        }
        let first = &group[0];
        let costs: Vec<f64> = group.iter().map(|s| s.mean_cost).collect();
        let thr: Vec<f64> = group.iter().map(|s| s.throughput).collect();
        let (cost, cost_se) = mean_se(&costs);
        let (tp, tp_se) = mean_se(&thr);
        let coop: Vec<f64> = group.iter().map(|s| s.n_coop as f64).collect();
        let noncoop: Vec<f64> = group.iter().map(|s| s.n_noncoop as f64).collect();
        let c = &first.config;
        w.write_record([
            "mean".to_string(),
            first.scenario_id.to_string(),
            String::new(),
            first.policy.name().to_string(),
            sig9(c.a_range),
            sig9(c.b_range),
            c.window.to_string(),
            sig9(c.lambda_coop),
            sig9(c.lambda_noncoop),
            sig9(mean_se(&coop).0),
            sig9(mean_se(&noncoop).0),
            sig9(cost),
            sig9(tp),
            group.iter().map(|s| s.violations).sum::<usize>().to_string(),
            sig9(cost_se),
            sig9(tp_se),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_sweep(spec: &SweepSpec, out: Option<&Path>) -> i32 {
    let mut err = io::stderr();
    warn_short_b(&spec.base, &mut err);
    let outcome = (|| {
        let groups = sweep(spec)?;
        let mut o = open_output(out)?;
        write_sweep(&groups, &mut o)?;
        o.flush()?;
        Ok::<_, HarnessError>(groups.iter().flatten().map(|s| s.violations).sum::<usize>())
    })();
    match outcome {
        Ok(0) => EXIT_OK,
        Ok(n) => {
            let _ = writeln!(err, "{n} safety violations involve cooperative vehicles");
            EXIT_VIOLATION
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

/// Runs one suite, printing a line per failure with its reproducing input and a closing tally.
pub fn verify_to(suite: Suite, seed: u64, n: usize, out: &mut dyn Write) -> io::Result<bool> {
    let report = run_suite(suite, seed, n);
    for f in &report.failures {
        writeln!(out, "FAIL {suite} instance {}: {}", f.instance, f.detail)?;
        for line in f.input.lines() {
            writeln!(out, "  {line}")?;
        }
    }
    writeln!(out, "{suite}: {} of {} instances passed", report.checked - report.failures.len(), report.checked)?;
    Ok(report.passed())
}

pub fn cmd_verify(suite: Suite, seed: u64, n: usize) -> i32 {
    match verify_to(suite, seed, n, &mut io::stdout().lock()) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_VIOLATION,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

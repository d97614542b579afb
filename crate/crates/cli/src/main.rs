use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use isect::engine::Policy;
use isect::harness::{cmd_run, cmd_sweep, cmd_verify, load_config, RunOptions, SweepSpec, EXIT_USAGE};
use isect::verify::Suite;

#[derive(Parser)]
#[command(name = "isect", version, about = "Intersection coordination experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its summary CSV.
    Run {
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "two_stage")]
        policy: Policy,
        /// Summary CSV path; stdout if omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Also write sampled trajectories of every vehicle to this CSV.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Run every combination of the listed values over a range of seeds.
    Sweep {
        /// Base config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "a", value_delimiter = ',', num_args = 1..)]
        a_range: Option<Vec<f64>>,
        #[arg(long = "w", value_delimiter = ',', num_args = 1..)]
        window: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        lambda_coop: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        lambda_noncoop: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "two_stage")]
        policy: Vec<Policy>,
        #[arg(long, default_value_t = 10)]
        replications: usize,
        /// Seed of the first replication; the rest follow consecutively.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Check a property suite on random instances.
    Verify {
        suite: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, short, default_value_t = 100)]
        n: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let code = match cli.command {
        Command::Run { config, seed, policy, out, trajectories } => match load_config(&config) {
            Ok(config) => cmd_run(&RunOptions { config, seed, policy }, out.as_deref(), trajectories.as_deref()),
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_USAGE
            }
        },
        Command::Sweep { config, a_range, window, lambda_coop, lambda_noncoop, policy, replications, seed, out } => {
            let base = match config.as_deref().map(load_config).transpose() {
                Ok(c) => c.unwrap_or_default(),
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_USAGE as u8);
                }
            };
            let spec = SweepSpec {
                a_range: a_range.unwrap_or_else(|| vec![base.a_range]),
                window: window.unwrap_or_else(|| vec![base.window]),
                lambda_coop: lambda_coop.unwrap_or_else(|| vec![base.lambda_coop]),
                lambda_noncoop: lambda_noncoop.unwrap_or_else(|| vec![base.lambda_noncoop]),
                policies: policy,
                replications,
                first_seed: seed,
                base,
            };
            cmd_sweep(&spec, out.as_deref())
        }
        Command::Verify { suite, seed, n } => match suite.parse::<Suite>() {
            Ok(suite) => cmd_verify(suite, seed, n),
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_USAGE
            }
        },
    };
    ExitCode::from(code as u8)
}


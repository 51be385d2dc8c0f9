//! Experiment runner. Each subcommand drives one library module, prints
//! the estimate-vs-oracle comparisons, and writes figure-ready CSV.
//!
//! Exit codes: 0 all checks pass, 1 an acceptance check failed, 2 usage
//! or configuration error.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

mod commands;
mod report;


#[derive(Parser)]
#[command(name = "entctl", version, about = "Entropy-weighted stochastic control experiments")]
struct Cli {
    /// Size of the rayon worker pool (default: all cores). Results are
    /// bit-identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Inverse temperature (entropy weight is 1/beta)
    #[arg(long, default_value_t = 1.0)]
    beta: f64,

    /// Time horizon T
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,

    /// Number of time steps
    #[arg(long, default_value_t = 400)]
    steps: usize,

    /// Number of Monte Carlo paths (or inner samples for `malliavin`)
    #[arg(long, default_value_t = 20_000)]
    paths: usize,

    /// RNG seed; the full output is a pure function of the flag set
    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Directory for CSV artifacts (none written if omitted)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Report format on stdout
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Exact Gibbs solution and optimality sweep on a random finite instance
    Gibbs {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of outcomes of the random instance
        #[arg(long, default_value_t = 8)]
        outcomes: usize,
        /// Number of random simplex points in the optimality sweep
        #[arg(long, default_value_t = 10_000)]
        sweep: usize,
    },
    /// Pinned-endpoint (bridge) policy vs Monte Carlo and closed form
    Bridge {
        #[command(flatten)]
        common: CommonArgs,
        /// Start point of the controlled diffusion
        #[arg(long, default_value_t = 1.0)]
        x0: f64,
        /// Target point of the quadratic terminal cost
        #[arg(long, default_value_t = 0.0)]
        x_star: f64,
    },
    /// Running-maximum cost: density martingale, cost match, control bounds
    Maxbm {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Tilted jump processes with shared-randomness comparison paths
    Jumps {
        #[command(flatten)]
        common: CommonArgs,
        /// Intensity amplitude of f(z) = alpha z^{-1/2} exp(-delta z)
        #[arg(long, default_value_t = 10.0)]
        alpha: f64,
        /// Intensity decay rate
        #[arg(long, default_value_t = 5.0)]
        delta: f64,
        /// Comma-separated tilt strengths
        #[arg(long, default_value = "0,1,2", value_delimiter = ',')]
        betas: Vec<f64>,
    },
    /// Linearized value PDE: convergence, control extraction, exit problem
    Pde {
        #[command(flatten)]
        common: CommonArgs,
        /// Spatial grid intervals
        #[arg(long, default_value_t = 200)]
        nx: usize,
        /// Temporal grid intervals
        #[arg(long, default_value_t = 100)]
        nt: usize,
        /// Bounded spatial domain "lo,hi" (default: truncated whole line)
        #[arg(long, value_delimiter = ',', num_args = 2)]
        domain: Option<Vec<f64>>,
    },
    /// Nested Malliavin-derivative control estimates vs closed forms
    Malliavin {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn validate(common: &CommonArgs) -> Result<(), String> {
    if !(common.beta > 0.0) {
        return Err(format!("--beta must be > 0, got {}", common.beta));
    }
    if !(common.horizon > 0.0) {
        return Err(format!("--horizon must be > 0, got {}", common.horizon));
    }
    if common.steps == 0 || common.paths == 0 {
        return Err("--steps and --paths must be >= 1".into());
    }
    Ok(())
}

fn ensure_out_dir(out: &Option<PathBuf>) -> Result<(), String> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    }
    Ok(())
}

fn artifact(out: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
    out.as_ref().map(|d| d.join(name))
}

fn write_artifact(path: &Path, body: &[u8]) -> Result<(), String> {
    std::fs::write(path, body).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

#[derive(Serialize)]
struct ConfigEcho {
    beta: f64,
    horizon: f64,
    steps: usize,
    paths: usize,
    seed: u64,
}

impl From<&CommonArgs> for ConfigEcho {
    fn from(c: &CommonArgs) -> Self {
        Self {
            beta: c.beta,
            horizon: c.horizon,
            steps: c.steps,
            paths: c.paths,
            seed: c.seed,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        // ignore the error if a pool already exists (e.g. in tests)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let outcome = match &cli.command {
        Command::Gibbs { common, outcomes, sweep } => {
            validate(common).and_then(|()| commands::run_gibbs(common, *outcomes, *sweep))
        }
        Command::Bridge { common, x0, x_star } => {
            validate(common).and_then(|()| commands::run_bridge(common, *x0, *x_star))
        }
        Command::Maxbm { common } => validate(common).and_then(|()| commands::run_maxbm(common)),
        Command::Jumps { common, alpha, delta, betas } => {
            commands::run_jumps(common, *alpha, *delta, betas)
        }
        Command::Pde { common, nx, nt, domain } => {
            validate(common).and_then(|()| commands::run_pde(common, *nx, *nt, domain.as_deref()))
        }
        Command::Malliavin { common } => {
            validate(common).and_then(|()| commands::run_malliavin(common))
        }
    };

    match outcome {
        Ok(report) => {
            let format = match &cli.command {
                Command::Gibbs { common, .. }
                | Command::Bridge { common, .. }
                | Command::Maxbm { common }
                | Command::Jumps { common, .. }
                | Command::Pde { common, .. }
                | Command::Malliavin { common } => common.format,
            };
            let pass = report.pass();
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&report).unwrap()),
                Format::Csv => print!("{}", report.render_text()),
            }
            if pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

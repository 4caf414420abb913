//! `scones` command-line entry point.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scones_core::harness::{run_experiment, ExperimentConfig, ExperimentKind};
use scones_core::{Error, FDivKind};

#[derive(Parser, Debug)]
#[command(name = "scones", version, about = "Regularized optimal transport with score-based conditional sampling")]
struct Cli {
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Print the resolved config and exit without running.
    #[arg(long, global = true)]
    print_config: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// SCONES vs barycentric projection on random Gaussian pairs.
    GaussianBench(GaussianArgs),
    /// Neural duals against exact discrete solvers.
    DiscreteValidate(DiscreteArgs),
    /// Standard normal to swiss roll with a trained score model.
    Swissroll(SwissrollArgs),
    /// Conditional samples from saved checkpoints.
    Sample(SampleArgs),
}

#[derive(Args, Debug)]
struct GaussianArgs {
    /// Dimensions, comma separated or repeated.
    #[arg(long = "dim", value_delimiter = ',')]
    dims: Vec<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// Samples per method and trial.
    #[arg(long)]
    samples: Option<usize>,
    /// Regularization strength (default 2d).
    #[arg(long)]
    lambda: Option<f64>,
    /// Dual training iterations.
    #[arg(long)]
    iters_dual: Option<usize>,
    /// Langevin steps per chain.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
struct DiscreteArgs {
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    /// Divergence: kl, reverse-kl, chi2, squared-hellinger, jensen-shannon, gan.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    iters_dual: Option<usize>,
}

#[derive(Args, Debug)]
struct SwissrollArgs {
    #[arg(long)]
    iters_score: Option<usize>,
    #[arg(long)]
    iters_dual: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Dual-pair checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Score-net or Gaussian target checkpoint.
    #[arg(long)]
    score_checkpoint: Option<PathBuf>,
    /// Source points (CSV with a header row).
    #[arg(long)]
    source_csv: Option<PathBuf>,
}

fn resolve(cli: Cli) -> Result<(ExperimentConfig, bool), Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::GaussianBench(a) => {
            cfg.kind = ExperimentKind::GaussianBench;
            let g = &mut cfg.gaussian;
            if !a.dims.is_empty() {
                g.dims = a.dims;
            }
            set(&mut g.trials, a.trials);
            set(&mut g.samples, a.samples);
            if a.lambda.is_some() {
                g.lambda = a.lambda;
            }
            set(&mut g.dual.iterations, a.iters_dual);
            set(&mut g.sampler.steps, a.steps);
        }
        Command::DiscreteValidate(a) => {
            cfg.kind = ExperimentKind::DiscreteValidate;
            let d = &mut cfg.discrete;
            set(&mut d.nx, a.nx);
            set(&mut d.ny, a.ny);
            if let Some(k) = a.kind {
                d.kind = FDivKind::parse(&k)?;
            }
            set(&mut d.lambda, a.lambda);
            set(&mut d.instances, a.instances);
            set(&mut d.dual.iterations, a.iters_dual);
        }
        Command::Swissroll(a) => {
            cfg.kind = ExperimentKind::Swissroll;
            let s = &mut cfg.swissroll;
            set(&mut s.score.iterations, a.iters_score);
            set(&mut s.dual.iterations, a.iters_dual);
            set(&mut s.samples, a.samples);
        }
        Command::Sample(a) => {
            cfg.kind = ExperimentKind::Sample;
            let s = &mut cfg.sample;
            if a.checkpoint.is_some() {
                s.checkpoint = a.checkpoint;
            }
            if a.score_checkpoint.is_some() {
                s.score_checkpoint = a.score_checkpoint;
            }
            if a.source_csv.is_some() {
                s.source_csv = a.source_csv;
            }
        }
    }
    Ok((cfg, cli.print_config))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "input" => 2,
        "linalg" => 3,
        "convergence" => 4,
        "domain" => 5,
        "divergence" => 6,
        "checkpoint" => 7,
        "io" => 8,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let (cfg, print_only) = resolve(cli)?;
    // a closed stdout (e.g. piped into `head`) is not an error
    let mut stdout = std::io::stdout().lock();
    if print_only {
        let _ = writeln!(stdout, "{}", cfg.to_json()?);
        return Ok(());
    }
    let artifacts = run_experiment(&cfg)?;
    for (k, v) in &artifacts.metrics {
        let _ = writeln!(stdout, "{k} = {v}");
    }
    for t in &artifacts.tables {
        let _ = writeln!(stdout, "table: {}", t.display());
    }
    if let Some(echo) = &artifacts.config_echo {
        let _ = writeln!(stdout, "config: {}", echo.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}

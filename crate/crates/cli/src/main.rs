use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pdmpq_cli::commands::{evaluate_cmd, pipeline_cmd, report_cmd, scales_cmd, simulate_cmd, solve_cmd, train_cmd};
use pdmpq_cli::{CliError, Context, RunConfig};

/// Quantized optimal maintenance of a corroding structure.
#[derive(Debug, Parser)]
#[command(name = "pdmpq", version)]
struct Cli {
    /// TOML configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Grid size; a comma-separated list for `pipeline`.
    #[arg(long, global = true, value_delimiter = ',')]
    k: Vec<usize>,
    /// Monte Carlo runs for `simulate` and `evaluate`.
    #[arg(long, global = true)]
    runs: Option<usize>,
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate trajectories and count those reaching the failure threshold.
    Simulate,
    /// Estimate the coordinate scales of the weighted norm.
    Scales,
    /// Train the quantization grids.
    Train,
    /// Run the backward recursion on the grids.
    Solve,
    /// Monte Carlo evaluation of the stopping rule.
    Evaluate,
    /// Histogram, quantiles, exceedance curve and stopped paths.
    Report,
    /// Scales, then train, solve and evaluate for each K.
    Pipeline,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    if let Some(r) = cli.runs {
        cfg.simulate.runs = r;
        cfg.evaluate.runs = r;
    }
    match (&cli.command, cli.k.as_slice()) {
        (_, []) => {}
        (Command::Pipeline, ks) => cfg.pipeline.k = ks.to_vec(),
        (_, [k]) => cfg.quantizer.k = *k,
        _ => return Err(CliError::Config("--k takes a list only for `pipeline`".into())),
    }
    let ctx = Context::new(cfg, cli.quiet)?;
    match cli.command {
        Command::Simulate => simulate_cmd(&ctx).map(drop),
        Command::Scales => scales_cmd(&ctx).map(drop),
        Command::Train => train_cmd(&ctx).map(drop),
        Command::Solve => solve_cmd(&ctx).map(drop),
        Command::Evaluate => evaluate_cmd(&ctx).map(drop),
        Command::Report => report_cmd(&ctx).map(drop),
        Command::Pipeline => {
            let ks = ctx.cfg.pipeline.k.clone();
            pipeline_cmd(&ctx, &ks).map(drop)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

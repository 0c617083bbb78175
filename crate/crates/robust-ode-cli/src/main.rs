//! `robust-ode`: command-line pipeline for distributionally robust learning
//! of heterogeneous ODE systems.
//!
//! Exit codes: 0 success, 2 input/configuration error, 3 numerical failure.

use clap::{Parser, Subcommand};

mod commands;

use commands::CliError;

#[derive(Parser)]
#[command(
    name = "robust-ode",
    version,
    about = "Robust aggregation and learning of heterogeneous ODE systems",
    propagate_version = true
)]
struct Cli {
    /// Worker threads for replication-level parallelism (0 = all cores).
    /// The ROBUST_ODE_THREADS environment variable overrides this flag.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Base directory that relative --out paths resolve against.
    #[arg(long, global = true, default_value = ".")]
    out_dir: std::path::PathBuf,

    /// Table output format for evaluate/bench/fig1.
    #[arg(long, global = true, value_parser = ["csv", "json"], default_value = "csv")]
    format: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate noisy multi-source benchmark data
    Simulate(commands::simulate::Args),
    /// Smooth one observation CSV into values, derivatives, and errors
    Smooth(commands::smooth::Args),
    /// Estimate the derivative Gram matrix
    Gamma(commands::gamma::Args),
    /// Solve for simplex weights from a Gram matrix artifact
    Weights(commands::weights::Args),
    /// Full inference: robust trajectory with pointwise intervals
    Infer(commands::infer::Args),
    /// Fit the link function to a trajectory CSV by gradient matching
    Fit(commands::fit::Args),
    /// Per-replication benchmark losses for one configuration
    Evaluate(commands::evaluate::Args),
    /// Aggregated benchmark tables over levels and design cases
    Bench(commands::bench::Args),
    /// Leave-one-subject-out evaluation of external multi-subject data
    Loso(commands::loso::Args),
    /// Stability experiment curves for the perturbed block-diagonal Gram
    Fig1(commands::fig1::Args),
    /// End-to-end pipeline emitting every stage artifact
    Pipeline(commands::pipeline::Args),
}

fn main() {
    let cli = Cli::parse();
    let threads = std::env::var("ROBUST_ODE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(cli.threads);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if threads > 0 {
        builder = builder.num_threads(threads);
    }
    if let Err(e) = builder.build_global() {
        eprintln!("error [threads]: {e}");
        std::process::exit(2);
    }
    let ctx = commands::Context {
        out_dir: cli.out_dir,
        format: cli.format,
        threads,
    };
    let result = match cli.command {
        Command::Simulate(args) => commands::simulate::run(&ctx, args),
        Command::Smooth(args) => commands::smooth::run(&ctx, args),
        Command::Gamma(args) => commands::gamma::run(&ctx, args),
        Command::Weights(args) => commands::weights::run(&ctx, args),
        Command::Infer(args) => commands::infer::run(&ctx, args),
        Command::Fit(args) => commands::fit::run(&ctx, args),
        Command::Evaluate(args) => commands::evaluate::run(&ctx, args),
        Command::Bench(args) => commands::bench::run(&ctx, args),
        Command::Loso(args) => commands::loso::run(&ctx, args),
        Command::Fig1(args) => commands::fig1::run(&ctx, args),
        Command::Pipeline(args) => commands::pipeline::run(&ctx, args),
    };
    if let Err(e) = result {
        let CliError { stage, source } = e;
        eprintln!("error [{stage}]: {source}");
        std::process::exit(if source.is_input_error() { 2 } else { 3 });
    }
}

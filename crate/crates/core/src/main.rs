use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smm_lab::experiment::{load_config, run, ExperimentKind};
use smm_lab::Error;

#[derive(Parser)]
#[command(name = "smm-lab", version, about = "Tabular state marginal matching experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Final state marginals of each method as CSV and SVG heatmaps.
    MarginalHeatmap(RunArgs),
    /// Left/right mass per iteration for greedy alternation and fictitious play.
    Oscillation(RunArgs),
    /// Stationary entropy against the noisy-TV probability.
    StochasticitySweep(RunArgs),
    /// Mixture-of-policies runs over several skill counts.
    Sm4Ablation(RunArgs),
    /// Historical-average versus final-iterate entropy for the bonus baselines.
    HaAblation(RunArgs),
    /// Square-root target rule against brute-force optimization.
    GoalTarget(RunArgs),
    /// Numerical check of the min-max equivalence on random MDPs.
    VerifyProp1(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Key/value config file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Layout(_) => "layout",
        Error::Config(_) => "config",
        Error::Dimension(_) => "dimension",
        Error::Distribution(_) => "distribution",
        Error::Support { .. } => "support",
        Error::NonConvergence { .. } => "non_convergence",
        Error::Optimizer { .. } => "optimizer",
        Error::Empty(_) => "empty",
        Error::Io { .. } => "io",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::MarginalHeatmap(a) => (ExperimentKind::MarginalHeatmap, a),
        Command::Oscillation(a) => (ExperimentKind::Oscillation, a),
        Command::StochasticitySweep(a) => (ExperimentKind::StochasticitySweep, a),
        Command::Sm4Ablation(a) => (ExperimentKind::Sm4Ablation, a),
        Command::HaAblation(a) => (ExperimentKind::HaAblation, a),
        Command::GoalTarget(a) => (ExperimentKind::GoalTarget, a),
        Command::VerifyProp1(a) => (ExperimentKind::VerifyProp1, a),
    };
    let result = load_config(kind, args.config.as_deref(), &args.out).and_then(|mut cfg| {
        if let Some(seeds) = args.seeds {
            cfg.seeds = seeds;
        }
        run(&cfg, args.jobs)
    });
    match result {
        Ok(manifest) => {
            println!("ok kind={} config_hash={} artifacts={}", manifest.kind, manifest.config_hash, manifest.artifacts.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error kind={} message={}", error_kind(&e), e);
            ExitCode::FAILURE
        }
    }
}

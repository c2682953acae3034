use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctes::harness::{run, ExperimentConfig, Overrides, Task};
use ctes::transfer::parse_components;

#[derive(Parser)]
#[command(name = "ctes", version, about = "Marked temporal point process experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic sequences (optionally thinned).
    Simulate(Common),
    /// Simulate a multivariate Hawkes process.
    SimulateHawkes(Common),
    /// Train the fully observed model.
    Fit(Common),
    /// Train the missing-event model.
    FitImtpp(Common),
    /// Fit a shared-excitation Hawkes process and assign communities.
    FitHawkes(Common),
    /// Train on a source region and fine-tune on a target region.
    Transfer {
        #[command(flatten)]
        common: Common,
        /// Source event file.
        #[arg(long)]
        source: Option<PathBuf>,
        /// Target event file.
        #[arg(long)]
        target: Option<PathBuf>,
        /// Components to freeze: encoder, time_head, dist_head, mark_head.
        #[arg(long)]
        freeze: Option<String>,
        #[arg(long = "lr-mult")]
        lr_mult: Option<f64>,
    },
    /// Fill gaps with a trained missing-event model.
    Impute(Common),
    /// Multi-step forecasts from a trained model.
    Forecast(Common),
    /// Next-event metrics of a trained model.
    Evaluate(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, common, mut overrides) = match cli.command {
        Command::Simulate(c) => (Task::Simulate, c, Overrides::default()),
        Command::SimulateHawkes(c) => (Task::SimulateHawkes, c, Overrides::default()),
        Command::Fit(c) => (Task::Fit, c, Overrides::default()),
        Command::FitImtpp(c) => (Task::FitImtpp, c, Overrides::default()),
        Command::FitHawkes(c) => (Task::FitHawkes, c, Overrides::default()),
        Command::Impute(c) => (Task::Impute, c, Overrides::default()),
        Command::Forecast(c) => (Task::Forecast, c, Overrides::default()),
        Command::Evaluate(c) => (Task::Evaluate, c, Overrides::default()),
        Command::Transfer { common, source, target, freeze, lr_mult } => {
            let freeze = match freeze.as_deref().map(parse_components).transpose() {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("error: --freeze: {e}");
                    return ExitCode::FAILURE;
                }
            };
            (Task::Transfer, common, Overrides { source, target, freeze, lr_mult, ..Default::default() })
        }
    };
    overrides.seed = common.seed;
    overrides.out = common.out;
    let result = ExperimentConfig::load(&common.config).and_then(|mut cfg| {
        cfg.apply(overrides)?;
        let out = cfg.out_dir(task);
        run(task, &cfg).map(|_| out)
    });
    match result {
        Ok(out) => {
            println!("{task}: wrote {}", out.join("metrics.json").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {task}: {e}");
            ExitCode::FAILURE
        }
    }
}

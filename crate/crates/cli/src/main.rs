// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cogmap::pipeline::{run_all, run_stage, DataSource, Overrides, PipelineConfig, Stage};

#[derive(Parser)]
#[command(
    name = "cogmap",
    version,
    about = "Probe, steer and decompose belief attribution on a toy transformer"
)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; every stage derives its own sub-seed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output root.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Steering multiplier.
    #[arg(long, global = true, allow_negative_numbers = true)]
    multiplier: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Toy,
    Gaussian,
}

#[derive(Subcommand)]
enum Command {
    /// Write the narrative-generation prompts (45 actions x 20 domains).
    GenPrompts,
    /// Build the toy model and its corpora, or a Gaussian activation dataset.
    GenSynthetic {
        #[arg(long, value_enum)]
        source: Option<Source>,
    },
    /// Train one-vs-rest probes for every action and layer.
    TrainProbes,
    /// Build steering vectors from the contrastive triplets.
    BuildSteering,
    /// Evaluate the scenarios with and without steering.
    EvalTom,
    /// Capture probe confidences at three timepoints and compute deltas.
    Decompose,
    /// Assemble the structured report and figures.
    Report,
    /// Run gen-synthetic through report in order.
    All,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let source = match &cli.command {
        Command::GenSynthetic { source: Some(s) } => Some(match s {
            Source::Toy => DataSource::Toy,
            Source::Gaussian => DataSource::Gaussian,
        }),
        _ => None,
    };
    let overrides = Overrides {
        seed: cli.seed,
        jobs: cli.jobs,
        out: cli.out.clone(),
        multiplier: cli.multiplier,
        source,
    };
    let config = match PipelineConfig::load(cli.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: cli: {e}");
            return ExitCode::FAILURE;
        }
    };
    let result = match cli.command {
        Command::GenPrompts => run_stage(Stage::GenPrompts, &config).map(|o| vec![o]),
        Command::GenSynthetic { .. } => run_stage(Stage::GenSynthetic, &config).map(|o| vec![o]),
        Command::TrainProbes => run_stage(Stage::TrainProbes, &config).map(|o| vec![o]),
        Command::BuildSteering => run_stage(Stage::BuildSteering, &config).map(|o| vec![o]),
        Command::EvalTom => run_stage(Stage::EvalTom, &config).map(|o| vec![o]),
        Command::Decompose => run_stage(Stage::Decompose, &config).map(|o| vec![o]),
        Command::Report => run_stage(Stage::Report, &config).map(|o| vec![o]),
        Command::All => run_all(&config),
    };
    match result {
        Ok(outcomes) => {
            for o in outcomes {
                println!("{}", o.summary);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

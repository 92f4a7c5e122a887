use std::path::PathBuf;
use std::process::ExitCode;

use alignprune::pipeline::{self, RunConfig, Stage};
use alignprune::Error;
use clap::{Args, Parser, Subcommand};

/// Supervised pruning of embedding features against human similarity
/// judgments, with probing and group comparisons.
#[derive(Parser)]
#[command(name = "alignprune", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the configuration without computing anything.
    Validate(Common),
    /// Run every stage.
    Run(Common),
    /// Prune each task and cross-validate the pruning.
    Prune(Common),
    /// Probe annotations from stored retained sets.
    Probe(Common),
    /// Score stored predictions and compare groups.
    Stats(Common),
    /// Regenerate cross-task tables from stored artifacts.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Overrides the output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = Some(seed);
        }
        if let Some(jobs) = self.jobs {
            cfg.jobs = jobs;
        }
        if let Some(out) = &self.out {
            // relative to the working directory, not the config file
            cfg.output_dir = std::path::absolute(out).unwrap_or_else(|_| out.clone());
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (common, stage) = match &cli.command {
        Command::Validate(c) => (c, None),
        Command::Run(c) => (c, Some(None)),
        Command::Prune(c) => (c, Some(Some(Stage::Prune))),
        Command::Probe(c) => (c, Some(Some(Stage::Probe))),
        Command::Stats(c) => (c, Some(Some(Stage::Stats))),
        Command::Report(c) => (c, Some(Some(Stage::Report))),
    };
    let outcome = common.load().and_then(|cfg| match stage {
        None => pipeline::validate(&cfg).map(|_| println!("configuration is valid")),
        Some(stage) => {
            let manifest = match stage {
                None => pipeline::run(&cfg)?,
                Some(s) => pipeline::run_stage(&cfg, s)?,
            };
            println!(
                "{}: {} files written to {}",
                manifest.status,
                manifest.outputs.len(),
                cfg.output_path().display()
            );
            Ok(())
        }
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Validation(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

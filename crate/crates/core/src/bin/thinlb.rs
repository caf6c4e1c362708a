use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thinlb::harness::{self, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(
    name = "thinlb",
    version,
    about = "Thin-stream load balancing and rank-based diffusion experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts.
    Run(RunArgs),
    /// Print the limit-equation parameters implied by a [model] section.
    Derive(ConfigArg),
    /// Parse and validate a config without running it.
    Validate(ConfigArg),
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config `out`, else ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    jobs: Option<usize>,
}

fn load(arg: &ConfigArg) -> Result<ExperimentConfig, HarnessError> {
    harness::load_config(&arg.config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Validate(arg) => {
            let config = load(&arg)?;
            config.validate().map_err(HarnessError::Validation)?;
            println!("ok");
        }
        Command::Derive(arg) => {
            let config = load(&arg)?;
            let text = harness::derive_text(&config).map_err(HarnessError::Validation)?;
            print!("{text}");
        }
        Command::Run(args) => {
            let mut config = load(&args.config)?;
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            let out = args
                .out
                .or_else(|| config.out.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            if let Some(jobs) = args.jobs {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(jobs.max(1))
                    .build_global()
                    .map_err(|e| HarnessError::Runtime(thinlb::Error::Capacity(e.to_string())))?;
            }
            let result = harness::run(&config, &out)?;
            let mut failed = 0;
            for r in &result.reports {
                println!(
                    "{} {} value={} threshold={}",
                    if r.pass { "PASS" } else { "FAIL" },
                    r.name,
                    r.value,
                    r.threshold
                );
                failed += usize::from(!r.pass);
            }
            println!(
                "{} reports, {} failed, artifacts in {}",
                result.reports.len(),
                failed,
                out.display()
            );
        }
    }
    Ok(())
}

use std::path::PathBuf;
use std::process::ExitCode;

use causal_ate::cli::{config::RunConfig, execute, Command};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "causal-ate", version, about = "Average treatment effect estimation for observational studies")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the treatment/control cohort from a raw survey file.
    Ingest {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run every enabled estimator and write the estimate table.
    Estimate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Estimate tables for each outcome weight profile.
    Sensitivity {
        #[arg(long)]
        config: PathBuf,
    },
    /// Monte Carlo replications on a synthetic study.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Covariate balance before and after matching.
    Balance {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let (command, path) = match args.command {
        Cmd::Ingest { config } => (Command::Ingest, config),
        Cmd::Estimate { config } => (Command::Estimate, config),
        Cmd::Sensitivity { config } => (Command::Sensitivity, config),
        Cmd::Simulate { config } => (Command::Simulate, config),
        Cmd::Balance { config } => (Command::Balance, config),
    };
    let result = RunConfig::load(&path).and_then(|cfg| execute(command, &cfg));
    match result {
        Ok((text, files)) => {
            print!("{text}");
            for f in files {
                log::info!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

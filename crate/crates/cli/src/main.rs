mod config;
mod job;
mod manifest;
mod reject;
mod report;
mod simulate;
mod toytrain;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use job::{execute, Job};
use manifest::RunManifest;

/// Usage and validation failures, including bad input files.
const EXIT_USAGE: u8 = 2;
/// Numerical failures that survived retries.
const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "artss", version, about = "Adaptive rejection of unlabeled samples")]
struct Cli {
    /// Worker threads for trial and cell level parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    Reject(reject::RejectArgs),
    Simulate(simulate::SimulateArgs),
    Toytrain(toytrain::ToytrainArgs),
    Report(report::ReportArgs),
    /// Re-run a recorded run from its manifest.
    Replay {
        manifest: PathBuf,
        /// Defaults to the manifest's own directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(command: &Command) -> Result<(Job, PathBuf)> {
    Ok(match command {
        Command::Reject(a) => (Job::Reject(a.resolve()?), a.out.clone()),
        Command::Simulate(a) => (Job::Simulate(a.resolve()?), a.out.clone()),
        Command::Toytrain(a) => (Job::Toytrain(a.resolve()?), a.out.clone()),
        Command::Report(a) => (Job::Report(a.resolve()?), a.out.clone()),
        Command::Replay { manifest, out } => {
            let m = RunManifest::load(manifest)?;
            let dir = out
                .clone()
                .unwrap_or_else(|| manifest.parent().map(PathBuf::from).unwrap_or_default());
            (Job::from_manifest(&m)?, dir)
        }
    })
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let numerical = e
        .chain()
        .filter_map(|c| c.downcast_ref::<artss::Error>())
        .any(artss::Error::is_numerical);
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

fn run(cli: &Cli) -> Result<String> {
    let (job, out) = resolve(&cli.command)?;
    match cli.jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            pool.install(|| execute(&job, &out))
        }
        None => execute(&job, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

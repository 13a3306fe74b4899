use clap::{Parser, Subcommand};
use rldp_cli::{run_file, Overrides, RunKind};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rldp", version, about = "Reflected mean-field particle systems: scenario runner")]
struct Cli {
    #[command(subcommand)]
    kind: Kind,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory, overriding the file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Kind {
    /// Simulate particle systems and write their paths.
    Simulate(Common),
    /// Distances of empirical measures to a mean-field reference.
    Chaos(Common),
    /// Monte Carlo Laplace functional.
    Laplace(Common),
    /// Variational objective of a policy, or its optimum over a family.
    Variational(Common),
    /// Upper estimate of the rate near a target.
    Rate(Common),
    /// Statistical submartingale test of a test function.
    Submartingale(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match cli.kind {
        Kind::Simulate(c) => (RunKind::Simulate, c),
        Kind::Chaos(c) => (RunKind::Chaos, c),
        Kind::Laplace(c) => (RunKind::Laplace, c),
        Kind::Variational(c) => (RunKind::Variational, c),
        Kind::Rate(c) => (RunKind::Rate, c),
        Kind::Submartingale(c) => (RunKind::Submartingale, c),
    };
    let overrides = Overrides {
        seed: common.seed,
        workers: common.workers,
        output_dir: common.out,
    };
    match run_file(&common.config, kind, &overrides) {
        Ok(outcome) => {
            println!("{}", outcome.output_dir.join("result.json").display());
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code as u8)
        }
    }
}

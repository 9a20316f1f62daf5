use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nlse_lab::manifest::Manifest;
use nlse_lab::runner::run_manifest;
use nlse_lab::LabError;

/// Numerical laboratory for the semilinear Schrodinger model.
#[derive(Parser)]
#[command(name = "nlse-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Path to the experiment manifest (TOML).
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for reports.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker thread count; defaults to the NLSE_LAB_THREADS env var or auto.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Nonlinear forward solve.
    Solve(RunArgs),
    /// Difference-quotient convergence study.
    Linearize(RunArgs),
    /// Carleman weight and ratio sweep checks.
    CarlemanCheck(RunArgs),
    /// FBI kernel bound checks.
    FbiCheck(RunArgs),
    /// Lipschitz stability for the linear potential p.
    RecoverP(RunArgs),
    /// Lipschitz stability for the nonlinear coefficient q.
    RecoverQ(RunArgs),
    /// Partial-data logarithmic stability.
    PartialData(RunArgs),
}

impl Command {
    fn kind(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Linearize(_) => "linearize",
            Command::CarlemanCheck(_) => "carleman-check",
            Command::FbiCheck(_) => "fbi-check",
            Command::RecoverP(_) => "recover-p",
            Command::RecoverQ(_) => "recover-q",
            Command::PartialData(_) => "partial-data",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Solve(a)
            | Command::Linearize(a)
            | Command::CarlemanCheck(a)
            | Command::FbiCheck(a)
            | Command::RecoverP(a)
            | Command::RecoverQ(a)
            | Command::PartialData(a) => a,
        }
    }
}

fn run(cli: &Cli) -> Result<(), LabError> {
    let args = cli.command.args();
    let manifest = Manifest::load(&args.manifest)?;
    if manifest.experiment.kind != cli.command.kind() {
        return Err(LabError::ManifestInvalid(format!(
            "experiment.kind: manifest declares '{}' but the '{}' subcommand was invoked",
            manifest.experiment.kind,
            cli.command.kind()
        )));
    }
    let threads = args.threads.or_else(|| {
        std::env::var("NLSE_LAB_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    run_manifest(&args.manifest, &args.out, threads)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ LabError::ManifestInvalid(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

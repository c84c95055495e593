use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use ymlab_cli::commands::{execute, Command, Options};
use ymlab_cli::CliError;

#[derive(Parser)]
#[command(name = "ymlab", version, about = "Yang-Mills flow and density experiments on periodic lattices")]
struct Cli {
    #[command(subcommand)]
    command: Sub,

    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Shipped preset: flat, abelian-heatwave, su2-bump, planted-tube
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,

    /// Output directory (overrides output.directory)
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,

    /// Override every seed in the config
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Sub {
    /// Full pipeline: flow or fixture, ladder and singular set
    Run,
    /// Integrate the flow, writing the ledger and snapshots
    FlowRun,
    /// Evaluate theta at probe points
    DensityProbe {
        /// CSV of probes with header z1..zm,tau,rho
        #[arg(long, value_name = "PATH")]
        probes: Option<PathBuf>,
        /// Read YMF1 snapshots from this directory instead of running the flow
        #[arg(long, value_name = "DIR")]
        snapshots: Option<PathBuf>,
    },
    /// Threshold the density ladder liminf over every grid site
    SingularExtract {
        #[arg(long)]
        epsilon: Option<f64>,
    },
    DiagMonotonicity,
    DiagSlice,
    DiagCone,
    DiagPde,
    /// Energy balance, rescaling and global-integral checks
    IdentitySuite,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.common.workers == 0 {
        eprintln!("error: --workers must be at least 1");
        return ExitCode::from(2);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.workers)
        .build_global()
    {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(2);
    }
    let command = match cli.command {
        Sub::Run => Command::Run,
        Sub::FlowRun => Command::FlowRun,
        Sub::DensityProbe { probes, snapshots } => Command::DensityProbe { probes, snapshots },
        Sub::SingularExtract { epsilon } => Command::SingularExtract { epsilon },
        Sub::DiagMonotonicity => Command::DiagMonotonicity,
        Sub::DiagSlice => Command::DiagSlice,
        Sub::DiagCone => Command::DiagCone,
        Sub::DiagPde => Command::DiagPde,
        Sub::IdentitySuite => Command::IdentitySuite,
    };
    let opts = Options {
        config: cli.common.config,
        preset: cli.common.preset,
        output: cli.common.output,
        seed: cli.common.seed,
    };
    match execute(&command, &opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e {
                CliError::Usage(_) => "error",
                CliError::Numerical(_) => "numerical failure",
            };
            eprintln!("{kind}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use fracot::validation::Corruption;
use fracot_cli::commands::{cmd_convergence, cmd_solve, cmd_validate, Overrides};

#[derive(Parser)]
#[command(name = "fracot", version, about = "Time-fractional optimal transport and mean-field planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory (overrides `out_dir` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write PGM heatmaps of the density.
    #[arg(long, global = true)]
    heatmaps: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a configured scenario for each listed order.
    Solve { config: PathBuf },
    /// Error and order tables on the convergence problem.
    Convergence { config: PathBuf },
    /// Randomized property checks of the discrete operators.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Flip a flux stencil sign before checking (sanity check of the checks).
        #[arg(long, hide = true)]
        corrupt_flux_sign: bool,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let o = Overrides {
        out: cli.out,
        heatmaps: cli.heatmaps,
    };
    match cli.command {
        Command::Solve { config } => {
            if let Some(path) = cmd_solve(&config, &o)? {
                println!("report: {}", path.display());
            }
        }
        Command::Convergence { config } => {
            cmd_convergence(&config, &o)?;
        }
        Command::Validate {
            seed,
            corrupt_flux_sign,
        } => {
            let corruption = if corrupt_flux_sign {
                Corruption::FluxSign
            } else {
                Corruption::None
            };
            cmd_validate(seed, corruption)?;
        }
    }
    Ok(())
}

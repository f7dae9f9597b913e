use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Parser, Subcommand};
use hjbopt_cli::commands;
use hjbopt_cli::config::Experiment;
use hjbopt_cli::error::CliError;

/// Solve discounted HJB equations, integrate optimal trajectories and verify decay rates.
#[derive(Parser)]
#[command(name = "hjbopt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` of the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Halve the node counts.
    #[arg(long, global = true)]
    quick: bool,
    /// Seed of the perturbation phases; overrides the policy seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the HJB equation; writes value.hjbv and solve_log.csv.
    Solve,
    /// Integrate the configured policy; writes trajectory.csv and trajectory_meta.json.
    Trajectory {
        /// Value file (default: value.hjbv in the output directory).
        #[arg(long)]
        value: Option<PathBuf>,
    },
    /// Check decay bounds and assumptions; writes rates.json, assumptions.json and plot data.
    Rates {
        #[arg(long)]
        value: Option<PathBuf>,
        /// Trajectory CSV (default: trajectory.csv in the output directory).
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Run the acceptance matrix; writes suite.csv.
    Suite,
    /// Compare a riccati_dist field with its closed form.
    RiccatiCheck {
        #[arg(long)]
        value: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let load = || -> Result<Experiment, CliError> {
        let path = cli.config.as_ref().ok_or_else(|| CliError::config("--config <path> is required"))?;
        Experiment::load(path, cli.quick)
    };
    let out_flag = cli.out.as_deref();
    match &cli.command {
        Command::Solve => {
            let exp = load()?;
            commands::solve(&exp, &exp.output_dir(out_flag))
        }
        Command::Trajectory { value } => {
            let exp = load()?;
            commands::trajectory(&exp, &exp.output_dir(out_flag), value.as_deref(), cli.seed)
        }
        Command::Rates { value, trajectory } => {
            let exp = load()?;
            commands::rates(&exp, &exp.output_dir(out_flag), value.as_deref(), trajectory.as_deref())
        }
        Command::Suite => {
            let out = out_flag.map_or_else(|| PathBuf::from(hjbopt_cli::DEFAULT_OUT), PathBuf::from);
            commands::suite(&out, cli.quick, cli.seed.unwrap_or(42))
        }
        Command::RiccatiCheck { value } => {
            let exp = load()?;
            commands::riccati_check(&exp, &exp.output_dir(out_flag), value.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::new(hjbopt_cli::error::ErrorKind::Config, "usage", first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

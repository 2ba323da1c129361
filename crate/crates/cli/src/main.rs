use std::path::PathBuf;
use std::process::ExitCode;

use adpmpc_cli::commands::{cmd_certify, cmd_report, cmd_simulate, cmd_train, TerminalMode};
use adpmpc_cli::config::load_config;
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

/// Terminal-cost training, certification, and certified receding-horizon
/// control on built-in benchmark systems.
#[derive(Parser)]
#[command(name = "adpmpc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TerminalArg {
    Avi,
    Lqr,
}

impl From<TerminalArg> for TerminalMode {
    fn from(arg: TerminalArg) -> Self {
        match arg {
            TerminalArg::Avi => TerminalMode::Avi,
            TerminalArg::Lqr => TerminalMode::Lqr,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the terminal cost by stabilizing value iteration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides output_dir in the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the controllability constants, terminal set and horizons.
    Certify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the receding-horizon controller from the configured starts.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Initial state as comma-separated coordinates; repeatable.
        #[arg(long = "x0")]
        x0: Vec<String>,
        /// Terminal cost: the trained approximant or the LQR quadratic.
        #[arg(long, value_enum, default_value = "avi")]
        terminal: TerminalArg,
    },
    /// Summarize artifacts and gate outcomes of a run directory.
    Report {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_x0(args: &[String]) -> anyhow::Result<Vec<DVector<f64>>> {
    args.iter()
        .map(|s| {
            let coords: Result<Vec<f64>, _> =
                s.split(',').map(|c| c.trim().parse::<f64>()).collect();
            coords
                .map(DVector::from_vec)
                .map_err(|e| anyhow::anyhow!("invalid --x0 '{s}': {e}"))
        })
        .collect()
}

fn run() -> anyhow::Result<i32> {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train { config, out } => {
            let cfg = load_config(&config, out.as_deref())?;
            cmd_train(&cfg)?
        }
        Command::Certify { config, out } => {
            let cfg = load_config(&config, out.as_deref())?;
            cmd_certify(&cfg)?
        }
        Command::Simulate {
            config,
            out,
            x0,
            terminal,
        } => {
            let cfg = load_config(&config, out.as_deref())?;
            let x0 = parse_x0(&x0)?;
            cmd_simulate(&cfg, &x0, terminal.into())?
        }
        Command::Report { config, out } => {
            let dir = match (out, config) {
                (Some(dir), _) => dir,
                (None, Some(config)) => load_config(&config, None)?.output_dir,
                (None, None) => anyhow::bail!("report needs --out or --config"),
            };
            cmd_report(&dir)?
        }
    };
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

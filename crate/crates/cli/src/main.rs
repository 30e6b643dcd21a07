use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pflow::commands::{self, CliError, ExitStatus, Outcome};

/// Simulate and certify nonlinearly preconditioned gradient flows.
#[derive(Parser)]
#[command(name = "pflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate and write the trajectory CSV (and SVG if configured).
    Run { config: PathBuf },
    /// Evaluate the claim catalog and write a JSON report.
    Certify { config: PathBuf },
    /// Compare discrete iterations with the flow over a list of step sizes.
    Compare { config: PathBuf },
    /// Repeat a run over values of one parameter.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
}

fn execute(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Run { config } => commands::cmd_run(&commands::load(&config)?),
        Command::Certify { config } => commands::cmd_certify(&commands::load(&config)?),
        Command::Compare { config } => commands::cmd_compare(&commands::load(&config)?),
        Command::Sweep {
            config,
            param,
            values,
        } => {
            let exp = commands::load(&config)?;
            let values = values
                .iter()
                .filter(|v| !v.trim().is_empty())
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::Setup(format!("--values: `{v}` is not a number")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            commands::cmd_sweep(&exp, &param, &values)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let status = match execute(cli) {
        Ok(outcome) => {
            for path in &outcome.written {
                println!("wrote {}", path.display());
            }
            for m in &outcome.messages {
                eprintln!("{m}");
            }
            outcome.status
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_status()
        }
    };
    if status != ExitStatus::Ok {
        eprintln!("exit status {}", status.code());
    }
    ExitCode::from(status.code() as u8)
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mdr_cli::commands;
use mdr_cli::scenario::Scenario;
use mdr_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "mdr", version, about = "Optimal mismatched-disturbance rejection: scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every controller of a scenario and write CSV, SVG and summary files.
    Run {
        scenario: PathBuf,
        #[arg(long, env = "MDR_OUT_DIR", default_value = ".")]
        out: PathBuf,
    },
    /// Tabulate run summaries from the same scenario.
    Compare {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Solve the stationary Riccati equation for a scenario's plant and weights.
    Gare { scenario: PathBuf },
    /// Check the optimal controller against a dense solver on random instances.
    Selftest {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        count: usize,
    },
}

fn execute(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Run { scenario, out } => {
            let sc = Scenario::load(&scenario)?;
            let output = commands::run_scenario(&sc, &out)?;
            for file in &output.files {
                println!("wrote {}", file.display());
            }
            let failed = output.failed_controllers();
            for c in &failed {
                eprintln!("controller {} failed: {}", c.label, c.error.as_deref().unwrap_or(""));
            }
            if let Some(first) = failed.first() {
                return Err(CliError::Solver(mdr_core::Error::Domain(format!(
                    "{} of {} controllers failed, first: {}",
                    failed.len(),
                    output.summary.controllers.len(),
                    first.label
                ))));
            }
            Ok(())
        }
        Command::Compare { summaries, csv } => {
            let loaded = summaries
                .iter()
                .map(|p| Ok((p.display().to_string(), commands::load_summary(p)?)))
                .collect::<CliResult<Vec<_>>>()?;
            let table = commands::compare(&loaded)?;
            print!("{}", table.to_text());
            if let Some(path) = csv {
                std::fs::write(&path, table.to_csv()).map_err(|e| CliError::io(&path, e))?;
            }
            Ok(())
        }
        Command::Gare { scenario } => {
            let report = commands::gare_report(&Scenario::load(&scenario)?)?;
            print!("{report}");
            for w in report.warnings() {
                eprintln!("warning: {w}");
            }
            Ok(())
        }
        Command::Selftest { seed, count } => {
            let report = commands::selftest(seed, count)?;
            print!("{report}");
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::SelfTest(format!("{} of {} instances out of tolerance", report.failures, report.instances)))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

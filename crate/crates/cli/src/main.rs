use std::io::Write;
use std::process::ExitCode;

use appo_cli::commands;
use appo_cli::{CliError, CliResult, ExperimentConfig, Overrides};
use clap::{Parser, Subcommand};
use serde::Serialize;

/// Offline preference-based policy optimization experiments on tabular MDPs.
#[derive(Parser)]
#[command(name = "appo-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the trajectory-pair and preference datasets.
    Gen,
    /// Fit the reward model on the preference dataset.
    FitReward,
    /// Fit the transition model on the trajectory-pair dataset.
    FitTransition,
    /// Fit estimators, run the solver and evaluate the result.
    Train,
    /// Run the training pipeline over a grid of parameters and seeds.
    Sweep,
    /// Check the library's identities and bounds on an MDP.
    Verify,
}

// A closed stdout (e.g. piped into `head`) is not an error worth reporting.
fn print_json<T: Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("summary serializes");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = ExperimentConfig::resolve(&cli.overrides)?;
    match cli.command {
        Command::Gen => print_json(&commands::cmd_gen(&cfg)?),
        Command::FitReward => print_json(&commands::cmd_fit_reward(&cfg)?),
        Command::FitTransition => print_json(&commands::cmd_fit_transition(&cfg)?),
        Command::Train => print_json(&commands::cmd_train(&cfg)?),
        Command::Sweep => print_json(&commands::cmd_sweep(&cfg)?),
        Command::Verify => {
            let report = commands::cmd_verify(&cfg)?;
            print_json(&report);
            if !report.passed() {
                let failed = report.failures().into_iter().map(String::from).collect();
                return Err(CliError::Checks(failed));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("APPO_LAB_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.render().to_string().trim_end().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

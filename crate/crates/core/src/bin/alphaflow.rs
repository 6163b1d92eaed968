//! CLI front end: run scenarios, analyze checkpoints, resume runs, render
//! plots. Exit codes: 0 success, 1 configuration / input error,
//! 2 numerical failure.

use alpha_flow::runner::{self, checkpoint, config, RunnerError};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "alphaflow", about = "regularized harmonic map flow toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the scenario described by a config file.
    Run { config: PathBuf },
    /// Report energies and the bubble decomposition of checkpoints.
    Analyze { checkpoints: Vec<PathBuf> },
    /// Continue a checkpointed run under a config's stop rules.
    Resume { checkpoint: PathBuf, config: PathBuf },
    /// Render energy plots (SVG, written next to each CSV).
    Plot { csv: Vec<PathBuf> },
}

fn exit_for(err: &RunnerError) -> ExitCode {
    match err {
        RunnerError::Flow(_)
        | RunnerError::Diagnostics(_)
        | RunnerError::Bubble(_)
        | RunnerError::Numerical(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn read_to_string(path: &PathBuf) -> Result<String, RunnerError> {
    std::fs::read_to_string(path).map_err(RunnerError::Io)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("alphaflow: {e}");
            exit_for(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), RunnerError> {
    match cmd {
        Command::Run { config } => {
            let cfg = config::parse_config(&read_to_string(&config)?)?;
            let bundle = runner::run_scenario(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&bundle.summary).unwrap());
        }
        Command::Analyze { checkpoints } => {
            if checkpoints.is_empty() {
                return Err(RunnerError::Scenario("no checkpoints given".into()));
            }
            let mut reports = Vec::new();
            for path in &checkpoints {
                let bytes = std::fs::read(path)?;
                let mut v = runner::analyze_checkpoint(&bytes)?;
                v["path"] = serde_json::json!(path.display().to_string());
                reports.push(v);
            }
            println!("{}", serde_json::to_string_pretty(&reports).unwrap());
        }
        Command::Resume { checkpoint: ckpt, config } => {
            let cfg = config::parse_config(&read_to_string(&config)?)?;
            let restored = checkpoint::read_checkpoint(&std::fs::read(&ckpt)?)?;
            let bundle = runner::resume_run(&cfg, restored)?;
            println!("{}", serde_json::to_string_pretty(&bundle.summary).unwrap());
        }
        Command::Plot { csv } => {
            if csv.is_empty() {
                return Err(RunnerError::Scenario("no csv files given".into()));
            }
            for path in &csv {
                let svg = runner::plot_csv(&read_to_string(path)?)?;
                let out = path.with_extension("svg");
                std::fs::write(&out, svg)?;
                println!("{}", out.display());
            }
        }
    }
    Ok(())
}

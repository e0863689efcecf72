use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

mod config;
mod experiments;
mod report;

/// Experiments on elliptic operators over closed manifolds with bounded geometry.
#[derive(Parser)]
#[command(name = "bgkit", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config file.
    Run { config: PathBuf },
    /// List the available experiments.
    List,
}

const EXIT_USAGE: u8 = 64;

fn run(path: &PathBuf) -> ExitCode {
    let source = match std::fs::read_to_string(path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let config = match config::parse(&source) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}:{}: {}", path.display(), e.line, e.message);
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let experiment = experiments::find(&config.experiment).expect("validated");
    let start = Instant::now();
    let outcome = match (experiment.run)(&config) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {} failed: {e}", config.experiment);
            return ExitCode::from(1);
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    let dir = report::output_dir(&config);
    let status = match report::emit(&dir, &config, &outcome, elapsed) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: writing reports to {}: {e}", dir.display());
            return ExitCode::from(1);
        }
    };
    for v in &outcome.verdicts {
        let tag = match v.status {
            experiments::Status::Pass => "PASS",
            experiments::Status::Fail => "FAIL",
            experiments::Status::Indeterminate => "INDETERMINATE",
        };
        println!("{tag:<13} {}: {}", v.rule, v.detail);
    }
    println!("{} finished in {elapsed:.2} s, report in {}", config.experiment, dir.join("report.json").display());
    ExitCode::from(report::exit_code(status))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for e in &experiments::EXPERIMENTS {
                println!("{:<18}{}", e.name, e.description);
            }
            ExitCode::SUCCESS
        }
        Command::Run { config } => run(&config),
    }
}

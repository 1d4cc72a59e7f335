//! `hdmix <command> --config <path> [--out <dir>] [--seed <u64>]`
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver/check failure.
//! `HDMIX_THREADS` caps the number of worker threads.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hdmix_cli::config::Command;

#[derive(Parser)]
#[command(name = "hdmix", version, about = "History-dependent mixed variational solver")]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file (flat `key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for CSV artifacts and the run manifest.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for randomized verification sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Time-step the configured model and write trajectory CSVs.
    Solve(RunArgs),
    /// Run the data-perturbation convergence study.
    StudyConvergence(RunArgs),
    /// Minimize the configured cost over the parameter box.
    Optimize(RunArgs),
    /// Run the structural invariant suite and print pass/fail per check.
    Verify(RunArgs),
    /// Contact demo with friction diagnostics.
    DemoContact(RunArgs),
}

impl CliCommand {
    fn split(&self) -> (Command, &RunArgs) {
        match self {
            CliCommand::Solve(a) => (Command::Solve, a),
            CliCommand::StudyConvergence(a) => (Command::StudyConvergence, a),
            CliCommand::Optimize(a) => (Command::Optimize, a),
            CliCommand::Verify(a) => (Command::Verify, a),
            CliCommand::DemoContact(a) => (Command::DemoContact, a),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = cli.command.split();

    if let Ok(value) = std::env::var("HDMIX_THREADS") {
        match value.parse::<usize>() {
            Ok(n) if n >= 1 => hdmix_core::configure_threads(Some(n)),
            _ => {
                eprintln!("config error: HDMIX_THREADS must be a positive integer (got '{value}')");
                return ExitCode::from(2);
            }
        }
    }

    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("config error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let config = match hdmix_cli::parse_config(&text) {
        Ok(c) => c,
        Err(errors) => {
            for e in &errors {
                eprintln!("config error: {e}");
            }
            return ExitCode::from(2);
        }
    };
    if config.command != command {
        eprintln!(
            "config error: config declares command '{}' but the CLI invoked '{}'",
            config.command.name(),
            command.name()
        );
        return ExitCode::from(2);
    }

    match hdmix_cli::run(&config, &args.out, args.seed) {
        Ok(artifacts) => {
            // Tolerate closed pipes from downstream tools like `head`.
            use std::io::Write;
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            for path in artifacts {
                let _ = writeln!(lock, "wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit_code as u8)
        }
    }
}

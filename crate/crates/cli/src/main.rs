use clap::{Parser, Subcommand};
use sqdini_cli::{run, Command, Options};
use std::path::PathBuf;
use std::process::ExitCode;

/// Gradient-growth estimator and constructive solutions for divergence-form
/// elliptic equations with square-Dini coefficients.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Scenario file (TOML); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed of the property-suite sampling.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for `props`.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Table of r, mu[-R(r)] and E(r).
    Estimate,
    /// Full constructive solve and gradient-ratio verdict.
    Verify,
    /// v/E drift for the Gilbarg-Serrin field of the config.
    Sharpness,
    /// Runs every module's quantitative suite.
    Props,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = match cli.command {
        Cmd::Estimate => Command::Estimate,
        Cmd::Verify => Command::Verify,
        Cmd::Sharpness => Command::Sharpness,
        Cmd::Props => Command::Props,
    };
    let opts = Options {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        threads: cli.threads,
    };
    let code = match run(cmd, &opts) {
        Ok(outcome) => {
            print!("{}", outcome.report);
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

//! `yaglom`: experiment runner for quasi-stationary limits of killed
//! nearest-neighbour chains.
//!
//! Settings come from an optional TOML file given by `--config`; every flag
//! overrides the config field of the same name. Exit codes: 0 success,
//! 1 other failure, 2 config/schema error, 3 validation error, 4 budget
//! exhausted.

use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

mod commands;
mod config;
mod fail;

use commands::Ctx;
use config::{Config, Overrides};
use fail::CliError;

#[derive(Parser)]
#[command(
    name = "yaglom",
    version,
    about = "Yaglom limits of killed nearest-neighbour chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Conditioned law, ratio series and TV distance to the closed-form limit
    Yaglom(Overrides),
    /// Spectral radius, Green sums and asymptotic comparisons
    Spectral(Overrides),
    /// Invariant measure tables, residuals and stochastic order
    Invariant(Overrides),
    /// h^ estimation, boundary weights and the mixture limit
    Transform(Overrides),
    /// Seeded trajectories, Monte Carlo checks and Orey traces
    Simulate(Overrides),
    /// Checks of the hypotheses behind the limit theorems
    Conditions(Overrides),
    /// Oscillation probe of the Kesten-type chain
    Kesten(Overrides),
}

type Handler = fn(&Ctx) -> Result<Value, CliError>;

fn run(cli: Cli) -> Result<Value, CliError> {
    let (flags, f): (&Overrides, Handler) = match &cli.command {
        Command::Yaglom(o) => (o, commands::yaglom),
        Command::Spectral(o) => (o, commands::spectral),
        Command::Invariant(o) => (o, commands::invariant),
        Command::Transform(o) => (o, commands::transform),
        Command::Simulate(o) => (o, commands::simulate),
        Command::Conditions(o) => (o, commands::conditions),
        Command::Kesten(o) => (o, commands::kesten),
    };
    let mut config = Config::resolve(flags)?;
    if matches!(cli.command, Command::Kesten(_))
        && config.chain.preset.is_none()
        && config.chain.regions.is_none()
    {
        config.chain.preset = Some("kesten".into());
    }
    f(&Ctx::new(config)?)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(v) => {
            // a closed pipe on stdout is not a failure: the reports are on disk
            let text = serde_json::to_string_pretty(&v["result"]).unwrap_or_default();
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit()
        }
    }
}

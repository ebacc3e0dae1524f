//! `sd-dane`: wire debugging, zone lifecycle, credential forging and
//! simulation from one binary.

mod commands;
mod support;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use commands::{forge, sim, wire, zone};

#[derive(Debug, Parser)]
#[command(
    name = "sd-dane",
    version,
    about = "DNSSEC-authenticated SOME/IP service discovery tools"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalOptions,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct GlobalOptions {
    /// Seed for every random choice (keys, placement, delays, loss).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for written artifacts.
    #[arg(long, short = 'o', global = true, default_value = ".")]
    pub out: PathBuf,
    /// Progress on stderr; repeat for more.
    #[arg(long, short = 'v', global = true, action = ArgAction::Count)]
    pub verbose: u8,
    /// Scenario file used when a command takes one and none is given.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decode service-discovery messages.
    #[command(subcommand, arg_required_else_help = true)]
    Wire(wire::WireCommand),
    /// Sign, verify and preload vehicle zones.
    #[command(subcommand, arg_required_else_help = true)]
    Zone(zone::ZoneCommand),
    /// Issue, publish and audit service credentials.
    #[command(subcommand, arg_required_else_help = true)]
    Forge(forge::ForgeCommand),
    /// Run the network simulator.
    #[command(subcommand, arg_required_else_help = true)]
    Sim(sim::SimCommand),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Wire(cmd) => wire::run(cmd, &cli.global),
        Command::Zone(cmd) => zone::run(cmd, &cli.global),
        Command::Forge(cmd) => forge::run(cmd, &cli.global),
        Command::Sim(cmd) => sim::run(cmd, &cli.global),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

//! `wire dump`: decode a captured service-discovery message.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Subcommand};
use sd_dane::wire::{decode_message, describe};

use crate::support::{CliResult, Stage};
use crate::GlobalOptions;

#[derive(Debug, Subcommand)]
pub enum WireCommand {
    /// Print header, entries and options, with security options decoded.
    Dump(DumpArgs),
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    /// Hex-encoded message; whitespace is ignored.
    pub file: PathBuf,
    /// Read the file as raw bytes instead of hex.
    #[arg(long)]
    pub raw: bool,
}

pub fn run(cmd: WireCommand, _global: &GlobalOptions) -> CliResult<ExitCode> {
    let WireCommand::Dump(args) = cmd;
    let raw = std::fs::read(&args.file).stage("read")?;
    let bytes = if args.raw {
        raw
    } else {
        let text: String = String::from_utf8_lossy(&raw)
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect();
        hex::decode(text).stage("hex")?
    };
    let msg = decode_message(&bytes).stage("decode")?;
    print!("{}", describe(&msg));
    Ok(ExitCode::SUCCESS)
}

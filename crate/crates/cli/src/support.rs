//! Errors, file helpers and randomness shared by the commands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::GlobalOptions;

/// A failure, tagged with the stage it happened in.
#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct CliError {
    pub stage: &'static str,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches a stage name to any displayable error.
pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> CliResult<T>;
}

impl<T, E: std::fmt::Display> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|e| CliError {
            stage,
            message: e.to_string(),
        })
    }
}

pub fn fail<T>(stage: &'static str, message: impl Into<String>) -> CliResult<T> {
    Err(CliError {
        stage,
        message: message.into(),
    })
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError {
        stage: "read",
        message: format!("{}: {e}", path.display()),
    })
}

/// Writes `contents` to `name` inside the output directory.
pub fn write_out(
    global: &GlobalOptions,
    name: impl AsRef<Path>,
    contents: &str,
) -> CliResult<PathBuf> {
    let path = global.out.join(name);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError {
            stage: "write",
            message: format!("{}: {e}", dir.display()),
        })?;
    }
    fs::write(&path, contents).map_err(|e| CliError {
        stage: "write",
        message: format!("{}: {e}", path.display()),
    })?;
    if global.verbose > 0 {
        eprintln!("wrote {}", path.display());
    }
    Ok(path)
}

/// Seeded from `--seed`, otherwise from the operating system.
pub fn rng(global: &GlobalOptions) -> ChaCha20Rng {
    match global.seed {
        Some(seed) => ChaCha20Rng::seed_from_u64(seed),
        None => ChaCha20Rng::from_entropy(),
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// A file name for a DNS name: the name without its trailing dot.
pub fn file_stem(name: &str) -> &str {
    name.trim_end_matches('.')
}

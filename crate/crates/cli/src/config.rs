//! Optional JSON config files. Keys mirror the long flag names of the
//! subcommand; a flag given on the command line overrides the file.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{CliError, CliResult};

pub trait Overlay: DeserializeOwned + Default {
    /// `self` holds the command-line values, `file` the config file values.
    fn overlay(self, file: Self) -> Self;
}

pub fn resolve<T: Overlay>(cli: T, path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else { return Ok(cli) };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config file {}: {e}", path.display())))?;
    let file: T = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("config file {}: {e}", path.display())))?;
    Ok(cli.overlay(file))
}

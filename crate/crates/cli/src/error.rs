use std::fmt;
use std::io;

/// Process exit statuses.
pub mod code {
    pub const FAILURE: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const MISSING_DATA: u8 = 3;
    pub const DOMAIN: u8 = 4;
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: code::USAGE, message: message.into() }
    }

    pub fn missing(message: impl Into<String>) -> Self {
        CliError { code: code::MISSING_DATA, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<chestnet::Error> for CliError {
    fn from(e: chestnet::Error) -> Self {
        use chestnet::Error as E;
        let code = match &e {
            E::MissingImage(_) => code::MISSING_DATA,
            E::Io(io) if io.kind() == io::ErrorKind::NotFound => code::MISSING_DATA,
            E::Io(_) => code::FAILURE,
            E::ZeroClassCount { .. } | E::RocUndefined | E::NonFinite { .. } => code::DOMAIN,
            _ => code::USAGE,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        chestnet::Error::Io(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::usage(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches the offending path to an I/O failure.
pub fn with_path<T>(r: io::Result<T>, path: &std::path::Path) -> CliResult<T> {
    r.map_err(|e| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", path.display(), err.message);
        err
    })
}

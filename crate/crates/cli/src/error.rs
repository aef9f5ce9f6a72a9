use std::fmt;
use std::path::Path;

use covid_am::ErrorKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Io,
    Validation,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Config => 2,
            Kind::Io => 3,
            Kind::Validation => 4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Config => "config",
            Kind::Io => "io",
            Kind::Validation => "validation",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn config(message: String) -> Self {
        CliError {
            kind: Kind::Config,
            message,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError {
            kind: Kind::Io,
            message: format!("{}: {e}", path.display()),
        }
    }
}

/// Single line: `error kind=<kind> message=<text>`.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = self.message.replace(['\n', '\r'], " ");
        write!(f, "error kind={} message={msg}", self.kind.name())
    }
}

impl From<covid_am::Error> for CliError {
    fn from(e: covid_am::Error) -> Self {
        let kind = match e.kind() {
            ErrorKind::Config => Kind::Config,
            ErrorKind::Io => Kind::Io,
            ErrorKind::Validation => Kind::Validation,
        };
        CliError {
            kind,
            message: e.to_string(),
        }
    }
}

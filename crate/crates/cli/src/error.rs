use std::fmt;
use std::process::ExitCode;

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or unreadable / malformed input: exit 2.
    Input(String),
    /// Some items failed under `--strict`: exit 3.
    Partial(String),
    /// Anything else: exit 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Self::Input(_) => 2,
            Self::Partial(_) => 3,
            Self::Runtime(_) => 1,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Input(m) | Self::Partial(m) | Self::Runtime(m) => f.write_str(m),
        }
    }
}

pub fn input(e: impl fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

pub fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

use std::fmt;
use std::path::Path;

/// Failure of a CLI command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
            CliError::Io(_) => "io",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numerical(m) | CliError::Io(m) => m,
        }
    }

    /// Single line: `error kind=<kind> code=<n> message="<escaped>"`.
    pub fn one_line(&self) -> String {
        format!(
            "error kind={} code={} message={:?}",
            self.kind(),
            self.exit_code(),
            self.message()
        )
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind(), self.message())
    }
}

impl std::error::Error for CliError {}

impl From<ncsn::Error> for CliError {
    fn from(e: ncsn::Error) -> Self {
        let msg = e.to_string();
        if e.is_numerical() {
            return CliError::Numerical(msg);
        }
        match e {
            ncsn::Error::Io(_) | ncsn::Error::Csv(_) | ncsn::Error::Checkpoint(_) => {
                CliError::Io(msg)
            }
            _ => CliError::Config(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_line_escapes_newlines() {
        let e = CliError::config("bad\nvalue \"x\"");
        let line = e.one_line();
        assert!(!line.contains('\n'));
        assert!(line.starts_with("error kind=config code=2 message="));
    }

    #[test]
    fn core_errors_map_to_exit_codes() {
        let e: CliError = ncsn::Error::NonFiniteLoss { iteration: 3 }.into();
        assert_eq!(e.exit_code(), 3);
        let e: CliError = ncsn::Error::InvalidArgument("x".into()).into();
        assert_eq!(e.exit_code(), 2);
        let e: CliError = ncsn::Error::from(ncsn::CheckpointError::Truncated("magic")).into();
        assert_eq!(e.exit_code(), 4);
    }
}

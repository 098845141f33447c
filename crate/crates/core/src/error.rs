use std::fmt;
use std::io;

/// Errors produced anywhere in the toolkit.
///
/// Each variant maps onto one of the CLI exit-code classes through
/// [`Error::exit_code`].
#[derive(Debug)]
pub enum Error {
    Io { path: String, source: io::Error },
    Config(String),
    /// Malformed or inconsistent input data (CSV content, dataset shapes).
    Data(String),
    Dimension(String),
    Schema(String),
    RankDeficient(String),
    /// A free-run simulation left the ±1e6 envelope.
    Divergence { step: usize, value: f64 },
    Numeric(String),
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric failure, 5 infeasible control.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } | Error::Data(_) | Error::Dimension(_) | Error::Schema(_) => 3,
            Error::RankDeficient(_) | Error::Divergence { .. } | Error::Numeric(_) => 4,
            Error::Infeasible(_) => 5,
        }
    }

    /// Short machine-parseable tag used as the CLI error prefix.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Dimension(_) => "dimension",
            Error::Schema(_) => "schema",
            Error::RankDeficient(_) => "rank",
            Error::Divergence { .. } => "divergence",
            Error::Numeric(_) => "numeric",
            Error::Infeasible(_) => "infeasible",
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "{path}: {source}"),
            Error::Config(s) => write!(f, "invalid configuration: {s}"),
            Error::Data(s) => write!(f, "invalid data: {s}"),
            Error::Dimension(s) => write!(f, "dimension mismatch: {s}"),
            Error::Schema(s) => write!(f, "model file schema: {s}"),
            Error::RankDeficient(s) => write!(f, "rank deficient: {s}"),
            Error::Divergence { step, value } => {
                write!(f, "simulation diverged at step {step} (|value| = {value:.3e})")
            }
            Error::Numeric(s) => write!(f, "numerical failure: {s}"),
            Error::Infeasible(s) => write!(f, "infeasible: {s}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

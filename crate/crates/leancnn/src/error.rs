use std::io;
use std::path::Path;

/// Errors surfaced by the pipeline and the CLI. Each maps to one process
/// exit code: 1 usage/config, 2 data/format/io, 3 numeric divergence.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("divergence: loss became {loss} at epoch {epoch}, batch {batch}; last finite loss {}", fmt_last(*.last_finite))]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
        last_finite: Option<f64>,
    },
    #[error(transparent)]
    Core(#[from] leancnn_core::Error),
}

fn fmt_last(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |v| format!("{v}"))
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn exit_code(&self) -> i32 {
        use leancnn_core::Error as Core;
        match self {
            Error::Usage(_) | Error::Config(_) | Error::Core(Core::Config(_)) => 1,
            Error::Divergence { .. } => 3,
            _ => 2,
        }
    }

    /// The message on one line, for machine parsing.
    pub fn one_line(&self) -> String {
        self.to_string().replace(['\n', '\r'], " ")
    }

    pub fn io(context: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            context: context.as_ref().display().to_string(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

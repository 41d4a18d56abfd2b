use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
///
/// Variants map onto the CLI exit-code contract: `Dimension`, `Contract`,
/// `Config`, `Parse` and `Io` are input errors, `Numeric` is a numeric
/// failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("contract violated in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported kernel size {0}: only odd kernels are supported")]
    UnsupportedKernel(usize),

    #[error("non-finite value produced by {op}{}", context.as_ref().map(|c| format!(" ({c})")).unwrap_or_default())]
    Numeric {
        op: &'static str,
        context: Option<String>,
    },

    #[error("parse error in {path} at byte {offset}: {detail}")]
    Parse {
        path: PathBuf,
        offset: usize,
        detail: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn numeric(op: &'static str) -> Self {
        Error::Numeric { op, context: None }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by non-finite arithmetic.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. })
    }
}

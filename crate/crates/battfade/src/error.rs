//! Error type shared across the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated an operation's precondition (negative time span,
    /// non-positive temperature, SOC outside `[0, 1]`, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter set, lookup table, or config file is structurally invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// The inputs left the region where the aging equations are meaningful
    /// (e.g. the SEI denominator `1 + X` reached zero).
    #[error("model validity error: {0}")]
    ModelValidity(String),

    /// A data file failed to parse; `line` is 1-based and counts every line
    /// in the file, including comments and the header.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A fit could not be carried out (degenerate dataset, non-finite
    /// objective, ...). Non-convergence is reported through
    /// [`crate::calibration::FitResult::converged`], not through this variant.
    #[error("fit error: {0}")]
    Fit(String),

    /// The fade trajectory never reaches the end-of-life threshold.
    #[error("no end of life: {0}")]
    NoEol(String),
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: &std::path::Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }
}

use thiserror::Error;

/// Failure modes surfaced by the library.
///
/// Numerical routines return `Err` rather than panicking for every condition
/// a caller can trigger through data: bad dimensions, misaligned grids,
/// non-finite states, underdetermined regressions.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("window [{start}, {start_plus_len}] is not aligned to the step grid (h = {h})")]
    NotStepAligned {
        start: f64,
        start_plus_len: f64,
        h: f64,
    },

    #[error("state blew up (non-finite) at path {path}, step {step}")]
    BlowUp { path: usize, step: usize },

    #[error(
        "regression would overfit: {features} features with {paths} paths (need features <= paths/10)"
    )]
    Overfit { features: usize, paths: usize },

    #[error("optimizer diverged: {0}")]
    Diverged(String),

    #[error("config error(s):\n{}", format_config_errors(.0))]
    Config(Vec<ConfigError>),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One problem found while parsing a config file. Parsing collects every
/// problem instead of stopping at the first.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line number; 0 when the problem is not tied to a line.
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

fn format_config_errors(errors: &[ConfigError]) -> String {
    errors
        .iter()
        .map(|e| format!("  {e}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

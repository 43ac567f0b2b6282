//! Error type for the scenario tooling, mapped onto process exit codes.

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),

    #[error("malformed JSON at line {line}, column {column}: {detail}")]
    Json {
        line: usize,
        column: usize,
        detail: String,
    },

    #[error("scenario generation failed: {0}")]
    Generation(String),

    #[error("baseline failed: {0}")]
    Baseline(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Solver(#[from] brsca_core::Error),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn from_json(err: serde_json::Error) -> Self {
        CliError::Json {
            line: err.line(),
            column: err.column(),
            detail: err.to_string(),
        }
    }

    /// Process exit code: 2 for input problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solver(brsca_core::Error::Numerical(_))
            | CliError::Solver(brsca_core::Error::Convergence { .. }) => 3,
            _ => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

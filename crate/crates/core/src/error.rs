use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("solver failure: {context} (relative residual {residual:.3e})")]
    SolverFailure { context: String, residual: f64 },

    #[error("degenerate coarse block {block}: {reason}")]
    DegenerateBlock { block: usize, reason: String },

    #[error("multiscale basis is rank deficient; offending blocks: {0:?}")]
    RankDeficient(Vec<usize>),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn solver(context: impl Into<String>, residual: f64) -> Self {
        Error::SolverFailure {
            context: context.into(),
            residual,
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

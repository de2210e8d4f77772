use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{context}: linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverDiverged {
        context: String,
        iterations: usize,
        residual: f64,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Prefix the solver context with `what`.
    pub fn in_context(self, what: &str) -> Self {
        match self {
            Error::SolverDiverged {
                context,
                iterations,
                residual,
            } => Error::SolverDiverged {
                context: if context.is_empty() {
                    what.to_string()
                } else {
                    format!("{what}: {context}")
                },
                iterations,
                residual,
            },
            other => other,
        }
    }
}

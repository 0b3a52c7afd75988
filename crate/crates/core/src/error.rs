use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input. `path` names the offending field.
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("degenerate state: {0}")]
    Degenerate(String),

    #[error(
        "{solver} did not converge after {iterations} iterations (best residual {residual:e})"
    )]
    SolverFailure {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(
        "policy `{policy}` produced an infeasible allocation (excess {excess:e} on link {link})"
    )]
    Policy {
        policy: String,
        link: usize,
        excess: f64,
    },

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("fluid integration failed at t = {time}: {source}")]
    Integration {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("resource pooling verdicts disagree: LP dual says {lp_verdict}, bottleneck count says {count_verdict}")]
    PoolingMismatch {
        lp_verdict: bool,
        count_verdict: bool,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn is_precondition(&self) -> bool {
        matches!(self, Error::Precondition(_) | Error::PoolingMismatch { .. })
    }
}

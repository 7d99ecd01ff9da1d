use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised across the calibration toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("duplicate {kind} id '{id}'")]
    DuplicateId { kind: &'static str, id: String },

    #[error("pipe '{pipe}' references missing node '{node}'")]
    DanglingEndpoint { pipe: String, node: String },

    #[error("unsupported element in section [{section}] at line {line}")]
    Unsupported { section: String, line: usize },

    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("singular hydraulic system: {0}")]
    Singular(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e} m)")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("no stable window for trial '{trial}'")]
    NoStableWindow { trial: String },

    #[error("window does not intersect series '{0}'")]
    EmptyWindow(String),

    #[error("missing trace for sensor '{0}'")]
    MissingTrace(String),

    #[error("missing demand data for hour starting at {0}")]
    MissingDemandHour(i64),

    #[error("retry budget exhausted after {attempts} failed solves")]
    RetryBudget { attempts: usize },

    #[error("training diverged (learning rate {learning_rate}, epoch {epoch})")]
    Divergence { learning_rate: f64, epoch: usize },

    #[error("optimizer failure: {0}")]
    Optimizer(String),

    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("statistics: {0}")]
    Statistics(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

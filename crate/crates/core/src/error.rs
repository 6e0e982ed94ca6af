use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no market snapshot for {0}")]
    MissingSnapshot(chrono::NaiveDate),

    #[error("unattainable price {price}: admissible range [{low}, {high}]")]
    UnattainablePrice { price: f64, low: f64, high: f64 },

    #[error("bisection did not converge: bracket [{low}, {high}] after {iterations} iterations")]
    NoConvergence { low: f64, high: f64, iterations: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("outside domain: {0}")]
    Domain(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("{stage} stage: {source}")]
    Stage { stage: &'static str, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

impl Error {
    /// True for errors caused by the run configuration rather than the data.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

/// Tag an error with the pipeline stage that raised it.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        })
    }
}

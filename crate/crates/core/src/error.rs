use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown symbol {symbol:?}: not a member of the category domain")]
    UnknownSymbol { symbol: String },

    #[error("invalid privacy budget: epsilon must be positive and finite, got {epsilon}")]
    InvalidBudget { epsilon: f64 },

    #[error("invalid domain: {reason}")]
    InvalidDomain { reason: String },

    #[error("empty input: {what}")]
    EmptyInput { what: &'static str },

    #[error("heterogeneous privacy budgets: report uses epsilon {found}, expected {expected}")]
    MixedEpsilon { expected: f64, found: f64 },

    #[error("invalid model parameters: {reason}")]
    InvalidParams { reason: String },

    #[error("observation index {index} out of range for {m} symbols")]
    ObservationOutOfRange { index: usize, m: usize },

    #[error("sequence {pseudonym:?} has zero probability under the model; posteriors undefined")]
    InfeasibleSequence { pseudonym: String },

    #[error("path enumeration refused: {states}^{len} hidden paths exceed the {limit} guard")]
    EnumerationGuard {
        states: usize,
        len: usize,
        limit: u64,
    },

    #[error("training failed: {reason}")]
    TrainingFailed { reason: String },

    #[error("invalid sensitive state set: {reason}")]
    InvalidSensitiveSet { reason: String },

    #[error("invalid similarity matrix: {reason}")]
    InvalidSimilarity { reason: String },

    #[error("invalid noise config: {reason}")]
    InvalidNoiseConfig { reason: String },

    #[error("report rejected: {reason}")]
    ReportRejected { reason: String },

    #[error("invalid config: {reason}")]
    InvalidConfig { reason: String },

    #[error("pipeline stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("model document error: {reason}")]
    ModelDocument { reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

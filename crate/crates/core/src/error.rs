use thiserror::Error;

/// Errors raised anywhere in the outline → features → classifier pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate outline: {0}")]
    DegenerateOutline(String),
    #[error("invalid outline: {0}")]
    InvalidOutline(String),
    #[error("{harmonics} harmonics need at least {needed} points, outline has {points}")]
    TooManyHarmonics {
        harmonics: usize,
        needed: usize,
        points: usize,
    },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("class {class} has {count} rows, at least {required} required")]
    ClassTooSmall {
        class: String,
        count: usize,
        required: usize,
    },
    #[error("pooled covariance is singular even after ridge repair")]
    SingularCovariance,
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("gini impurity of an empty node")]
    EmptyNode,
    #[error("solver did not converge within {iterations} iterations: {context}")]
    NoConvergence { iterations: usize, context: String },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("taxonomy violation: {0}")]
    TaxonomyViolation(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: row {row}: {message}")]
    Parse {
        path: String,
        row: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wraps the error with a description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any context layers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by bad input data rather than bad usage.
    pub fn is_data_error(&self) -> bool {
        !matches!(self.root(), Error::Io(_))
    }
}

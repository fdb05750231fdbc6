use chrono::{NaiveDate, NaiveDateTime};
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("timestamps must increase by whole hours: {previous} followed by {next}")]
    NonMonotonicTimestamp {
        previous: NaiveDateTime,
        next: NaiveDateTime,
    },
    #[error("cannot parse timestamp `{0}`")]
    InvalidTimestamp(String),
    #[error("gap of {hours} hours after {after} exceeds the interpolation limit")]
    GapTooLarge { after: NaiveDateTime, hours: i64 },
    #[error("invalid value in column `{column}` at {timestamp}: {value}")]
    InvalidValue {
        column: String,
        timestamp: NaiveDateTime,
        value: String,
    },
    #[error("dataset spans {hours} hours, at least {required} are needed")]
    DatasetTooShort { hours: usize, required: usize },
    #[error("forecast day {0} is outside the usable dataset span")]
    DayOutOfRange(NaiveDate),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("singular design matrix")]
    SingularDesign,
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("variable `{0}` is not corrected")]
    UncorrectedVariable(String),
    #[error("lag {lag} unavailable at {timestamp}")]
    MissingLag {
        timestamp: NaiveDateTime,
        lag: usize,
    },
    #[error("timestamp {0} is not forecastable")]
    NotForecastable(NaiveDateTime),
    #[error("training loss became non-finite at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("variance search failed: {0}")]
    SearchFailed(String),
    #[error("quantile level {0} outside (0, 1)")]
    InvalidLevel(f64),
    #[error("damped Newton iteration did not converge")]
    NewtonDiverged,
    #[error("invalid hyper-parameter: {0}")]
    InvalidHyperparameter(String),
    #[error("residual at lag {lag} unavailable at {timestamp}")]
    MissingResidual {
        timestamp: NaiveDateTime,
        lag: usize,
    },
    #[error("non-finite expert forecast")]
    NonFiniteForecast,
    #[error("no candidate experts")]
    EmptyCandidates,
    #[error("evaluation window contains no forecastable hour")]
    EmptyWindow,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by user configuration rather than data.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self.root(),
            Error::Config(_)
                | Error::InvalidLevel(_)
                | Error::InvalidHyperparameter(_)
                | Error::InvalidScenario(_)
                | Error::Json(_)
        )
    }
}

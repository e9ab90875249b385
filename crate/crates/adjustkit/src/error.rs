use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Estimation,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{0}` not found in CSV header")]
    MissingColumn(String),
    #[error("row {row}: treat value `{value}` is not 0 or 1")]
    BadTreatValue { row: usize, value: String },
    #[error("row {row}, column `{column}`: cannot parse `{value}`: {reason}")]
    ParseError {
        row: usize,
        column: String,
        value: String,
        reason: String,
    },
    #[error("dataset has no rows after {0}")]
    EmptyDataset(String),
    #[error("unknown term variable `{0}`")]
    UnknownTerm(String),
    #[error("variable `{var}` has level `{level}` not seen when the model was fitted")]
    UnseenLevel { var: String, level: String },
    #[error("model did not converge: {0}")]
    NonConverged(String),
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("{0} is outside the domain of the requested summary")]
    DomainError(String),
    #[error("an arm has zero or all events; ratio summaries are undefined")]
    ZeroCells,
    #[error("{n_rows} standardisation-population rows cannot be scored by the fitted model")]
    PredictionGap { n_rows: usize },
    #[error("negative variance from delta method; covariance is not positive semidefinite")]
    NegativeVariance,
    #[error("degenerate input for test-based interval: {0}")]
    DegenerateInput(String),
    #[error("bootstrap scheme does not mimic the trial design: {0}")]
    DesignMismatch(String),
    #[error("{failed} of {total} bootstrap replicates failed")]
    TooManyFailures { failed: usize, total: usize },
    #[error("covariate `{0}` has no observed values")]
    AllMissing(String),
    #[error("missingness model predicts observation probability below 1e-6 for an observed row")]
    PerfectPredictionOfMissingness,
    #[error("invalid estimand for this method: {0}")]
    InvalidEstimand(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            InvalidConfig(_) | InvalidEstimand(_) | UnknownScenario(_) | DesignMismatch(_) => {
                ErrorClass::Config
            }
            MissingColumn(_) | BadTreatValue { .. } | ParseError { .. } | EmptyDataset(_)
            | UnknownTerm(_) | AllMissing(_) | Io(_) | Csv(_) => ErrorClass::Data,
            _ => ErrorClass::Estimation,
        }
    }
}

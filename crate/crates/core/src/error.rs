use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("integration failed at t = {t}: step size underflow")]
    StepUnderflow { t: f64 },

    #[error("integration failed at t = {t}: step budget exhausted")]
    TooManySteps { t: f64 },

    #[error("integration diverged at t = {t}: non-finite state")]
    Divergence { t: f64 },

    #[error("time {t} is outside the regimen domain [0, {horizon}]")]
    OutOfDomain { t: f64, horizon: f64 },

    #[error("trajectory ends at {found} but the objective horizon is {expected}")]
    HorizonMismatch { expected: f64, found: f64 },

    #[error("invalid regimen: {0}")]
    InvalidRegimen(String),

    #[error("dose grid has no levels for drug {0}")]
    EmptyGrid(usize),

    #[error("every candidate regimen failed to integrate; last error: {0}")]
    AllCandidatesFailed(Box<Error>),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}

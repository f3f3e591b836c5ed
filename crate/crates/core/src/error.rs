use steerank_autodiff::DiffError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("infeasible constraints: {0}")]
    Infeasible(String),
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
    #[error("enumeration budget exceeded: {count} arrangements > {budget}")]
    Budget { count: u128, budget: u128 },
    #[error("bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Diff(DiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<DiffError> for Error {
    fn from(e: DiffError) -> Self {
        match e {
            DiffError::NoFeasibleAction => Error::Infeasible("every candidate is masked".into()),
            DiffError::NonFinite(name) => Error::NonFinite(name),
            other => Error::Diff(other),
        }
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("numeric domain error: {0}")]
    Numeric(String),

    #[error("generator is reducible; states unreachable from state {from}: {unreachable:?}")]
    ReducibleGenerator { from: usize, unreachable: Vec<usize> },

    #[error("structural error: {0}")]
    Structure(String),

    #[error("endpoint pair ({start} -> {end}) has zero transition probability over delta={delta}")]
    ImpossibleEndpoint { start: usize, end: usize, delta: f64 },

    #[error("endpoint-conditioned sampling failed after rejection cap and fallback: {0}")]
    Sampling(String),

    #[error("likelihood underflow to zero for subject {subject} at visit {visit}")]
    LikelihoodImpossible { subject: String, visit: usize },

    #[error("no mixture component can explain subject {0}")]
    SubjectImpossible(String),

    #[error("move unavailable: {0}")]
    MoveUnavailable(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

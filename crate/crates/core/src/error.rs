use thiserror::Error;

/// Errors raised by the simulation and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("model evaluation failed at t={t}, x={x:?}: {msg}")]
    Model { t: f64, x: Vec<f64>, msg: String },
    #[error("assumption violated: {0}")]
    AssumptionViolation(String),
    #[error("budget exceeded: requested {requested} particle-steps, limit {limit}")]
    Budget { requested: u128, limit: u128 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

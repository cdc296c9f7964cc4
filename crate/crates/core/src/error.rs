use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("end of series: no interval at index {0}")]
    EndOfSeries(usize),

    #[error("invalid config `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("battery energy {energy} MWh left [{min}, {max}] after update")]
    ContractViolation { energy: f64, min: f64, max: f64 },

    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow { path: PathBuf, line: u64, reason: String },

    #[error("{path}: gap of {missing} intervals after {after} cannot be filled")]
    GapTooLarge { path: PathBuf, after: String, missing: i64 },

    #[error("series misaligned: {0}")]
    MisalignedSeries(String),

    #[error("instance too large: {0}")]
    InstanceTooLarge(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig { key: key.into(), reason: reason.into() }
    }
}

use thiserror::Error;

use crate::space::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layer counts must be non-negative (got n_conv={n_conv}, n_fc={n_fc})")]
    NegativeLayerCount { n_conv: i64, n_fc: i64 },

    #[error("invalid configuration: {}", format_violations(.0))]
    InvalidConfiguration(Vec<Violation>),

    #[error("cannot parse configuration: {0}")]
    ParseConfig(String),

    #[error("invalid settings: {0}")]
    Settings(String),

    #[error("budget must be positive (got {0})")]
    InvalidBudget(i64),

    #[error("invalid scheduler parameter: {0}")]
    Scheduler(String),

    #[error("unknown stopping mode `{0}`")]
    UnknownStopMode(String),

    #[error("unknown surrogate `{0}`")]
    UnknownSurrogate(String),

    #[error("invalid envelope: {0}")]
    Envelope(String),

    #[error("invalid training history: {0}")]
    History(String),

    #[error("blackbox evaluation failed: {0}")]
    Evaluation(String),

    #[error("ledger error: {0}")]
    Ledger(String),

    #[error("ledger is inconsistent with settings: {0}")]
    Inconsistent(String),

    #[error("empty ledger")]
    EmptyLedger,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("model `{model}` produced a non-finite {quantity}{}", lag_context(*.lag))]
    ModelEvaluation {
        model: String,
        quantity: &'static str,
        lag: Option<usize>,
    },

    #[error("incommensurable grid at delta = {delta}: {}", .offending.join(", "))]
    IncommensurableGrid { delta: String, offending: Vec<String> },

    #[error("delta = {delta} lies outside (0, 1)")]
    DeltaOutOfRange { delta: String },

    #[error("non-finite {quantity} for particle {particle} at step {step}")]
    NonFiniteState {
        particle: usize,
        step: usize,
        quantity: &'static str,
    },

    #[error("untamed run diverged: max |X| = {magnitude:.3e} exceeds {threshold:.0e}")]
    Diverged { magnitude: f64, threshold: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("sample count mismatch: {left} vs {right}")]
    CountMismatch { left: usize, right: usize },

    #[error("exact assignment requested for {n} points, cap is {cap}")]
    CapExceeded { n: usize, cap: usize },

    #[error("slope needs at least 3 positive points, got {points}")]
    SlopeUndefined { points: usize },

    #[error("mean-field oracle gap {gap:.3e} exceeds allowance {allowed:.3e}")]
    OracleMismatch { gap: f64, allowed: f64 },

    #[error("i/o error: {0}")]
    Io(String),
}

fn lag_context(lag: Option<usize>) -> String {
    match lag {
        Some(v) => format!(" (lag index {v})"),
        None => String::new(),
    }
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by invalid user input rather than by a run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::IncommensurableGrid { .. } | Error::DeltaOutOfRange { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

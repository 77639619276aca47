use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A user-supplied setting is out of range. `key` names the setting.
    #[error("invalid configuration `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A simulated state left the finite floats.
    #[error("numerical overflow at level {level}, grid step {step}, theta {theta:?}")]
    NumericalOverflow {
        level: u32,
        step: usize,
        theta: Vec<f64>,
    },

    /// A single estimator term kept failing after its retry budget.
    #[error("estimator term {run_id} failed after {attempts} attempts: {last}")]
    RetriesExhausted {
        run_id: u64,
        attempts: u32,
        last: Box<Error>,
    },
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn precondition(message: impl Into<String>) -> Self {
        Error::Precondition(message.into())
    }

    /// Whether a fresh-seed retry may succeed.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NumericalOverflow { .. })
    }
}

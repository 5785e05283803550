use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid tag {tag:?} at line {line}: {message}")]
    InvalidTag {
        line: usize,
        tag: String,
        message: String,
    },

    #[error("cannot sample {needed} mentions of type {entity_type}: only {available} available")]
    Infeasible {
        entity_type: String,
        needed: usize,
        available: usize,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("record {index}: {message}")]
    Record { index: usize, message: String },

    #[error("decoding error: {0}")]
    Decode(String),

    #[error("scorer failed at word {word}: {source}")]
    Scorer {
        word: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unknown {kind} {name:?} (registered: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input or configuration rather than a bug
    /// or a backend failure.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            Error::Tensor(_) | Error::Diverged { .. } | Error::Scorer { .. }
        )
    }
}

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("episode already finished; call reset() first")]
    EpisodeFinished,

    #[error("training diverged at step {timestep}: non-finite value in {what}")]
    Diverged { timestep: u64, what: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(
    context: &'static str,
    expected: impl ToString,
    got: impl ToString,
) -> Error {
    Error::Shape {
        context,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

/// Turns a non-finite failure during training into [`Error::Diverged`].
pub(crate) fn diverged_at(timestep: u64) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::NonFinite(what) => Error::Diverged { timestep, what },
        other => other,
    }
}

use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("gradient descent diverged: loss {loss:.3e} exceeded 1e12 at stepsize {stepsize:.3e}")]
    Diverged { stepsize: f64, loss: f64 },

    #[error("degenerate rank: singular value sigma_{rank} is zero")]
    DegenerateRank { rank: usize },

    #[error("singular Gram matrix: smallest eigenvalue {alpha:.3e} is at or below 1e-12")]
    SingularGram { alpha: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

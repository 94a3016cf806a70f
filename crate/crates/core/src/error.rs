use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("iterate diverged (non-finite value) at step {step}")]
    Divergence { step: usize },

    #[error("optimizer failed to converge: gradient norm {grad_norm:.3e} after {iters} iterations")]
    Convergence { iters: usize, grad_norm: f64 },

    #[error("retain set is empty ({n} rows, forget fraction {rf})")]
    EmptyRetain { n: usize, rf: f64 },

    #[error("exact enumeration limited to T <= {max}, got T = {got}; use the arctan bound instead")]
    TooLarge { max: usize, got: usize },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("results file error: {0}")]
    Results(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

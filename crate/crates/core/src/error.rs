use thiserror::Error;

/// Errors raised by the imaging, likelihood and bound computations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("negative value {value} at index {index}")]
    NegativeValue { index: usize, value: f64 },

    /// A Poisson rate of zero where the model needs a positive rate.
    #[error("singular Poisson rate at measurement pixel {pixel}")]
    SingularRate { pixel: usize },

    #[error("positive-definite factorization failed (epsilon = {epsilon:e})")]
    Factorization { epsilon: f64 },

    #[error("could not place {requested} spots without overlap after {retries} retries")]
    Placement { requested: usize, retries: usize },

    #[error("{failed} of {total} trials failed, above the 1% tolerance: {last}")]
    TrialFailures {
        failed: usize,
        total: usize,
        last: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite evaluation at probe point {probe:?}")]
    NonFinite { probe: Vec<f64> },

    #[error("{what} is singular at q = {q:?}")]
    Singular { what: &'static str, q: Vec<f64> },

    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:e}")]
    NotPsd { eigenvalue: f64 },

    #[error("matrix of shape {rows}x{cols} has rank {rank}, expected {expected}")]
    RankDeficient {
        rows: usize,
        cols: usize,
        rank: usize,
        expected: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index {index} out of range 0..{len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("gain condition violated: {0}")]
    GainCondition(String),

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("integration aborted at t = {t}: non-finite derivative")]
    Diverged { t: f64, last: Vec<f64> },
}

//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid chain: {0}")]
    InvalidChain(String),

    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("site {site} out of range 1..={n}")]
    SiteOutOfRange { site: usize, n: usize },

    #[error("excitation sector {k} not present in basis")]
    SectorMissing { k: usize },

    #[error("operands live on different bases: {0}")]
    BasisMismatch(String),

    #[error("initial state excites {support} qubits but basis is truncated at kmax={kmax}")]
    TruncationExceeded { support: usize, kmax: usize },

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("physicality violated at t={t}: {what} = {value:e}")]
    Physicality { t: f64, what: String, value: f64 },

    #[error("linear algebra backend error: {0}")]
    Linalg(#[from] ndarray_linalg::error::LinalgError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

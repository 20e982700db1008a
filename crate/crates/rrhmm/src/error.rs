//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by model construction, estimation, learning, and inference.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not column-stochastic: {0}")]
    NotStochastic(String),

    #[error("numerical rank {found} does not match requested rank {expected}")]
    RankMismatch { expected: usize, found: usize },

    #[error("power iteration did not converge within {0} iterations")]
    NoConvergence(usize),

    #[error("sliding-window sampling requires a stationary prior: ||T pi - pi||_1 = {0:.3e}")]
    NonStationaryPrior(f64),

    #[error("symbol {symbol} out of range 1..={n}")]
    SymbolOutOfRange { symbol: usize, n: usize },

    #[error("observed sequence has zero probability at position {0}")]
    ZeroProbabilitySequence(usize),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("sequence of length {len} too short for window {window} (need at least {min})")]
    SequenceTooShort {
        len: usize,
        window: usize,
        min: usize,
    },

    #[error("event space of {requested} events exceeds the cap of {cap}")]
    EventSpaceTooLarge { requested: usize, cap: usize },

    #[error("requested rank {k} exceeds moment matrix dimension {dim}")]
    RankTooLarge { k: usize, dim: usize },

    #[error("degenerate moments: sigma_{k}(P21) = {sigma:.3e} is below {threshold:.3e} * sigma_1")]
    DegenerateMoments {
        k: usize,
        sigma: f64,
        threshold: f64,
    },

    #[error("projected observation map is not invertible: sigma_k = {0:.3e}")]
    NotInvertible(f64),

    #[error(
        "conditional-probability denominator {denominator:.3e} is below the floor {floor:.3e}"
    )]
    DegenerateDenominator { denominator: f64, floor: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("feature vector is not normalized: sum = {0}")]
    NotNormalized(f64),

    #[error("sequence space {n}^{t} exceeds the enumeration cap of {cap}")]
    SequenceSpaceTooLarge { n: usize, t: usize, cap: usize },

    #[error("invalid model file: {0}")]
    InvalidModel(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

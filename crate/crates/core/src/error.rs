//! Error type for the solver library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("move leaves the hypercube: direction not applicable at this point")]
    InvalidMove,

    #[error("arrangement too large: {chambers} chambers exceed the limit {max}")]
    ArrangementTooLarge { chambers: usize, max: usize },

    #[error("feature dimension exceeds enumeration cap: r = {r}, cap = {cap}")]
    DimensionCapExceeded { r: usize, cap: usize },

    #[error("ambiguity explosion: {branches} readout branches exceed 2^{cap}")]
    AmbiguityExplosion { branches: u64, cap: u32 },

    #[error("instance exceeds oracle enumeration guard: {0}")]
    OracleGuardExceeded(String),

    #[error("effective rank after truncation exceeds cap: rank = {rank}, cap = {cap}")]
    RankExceedsCap { rank: usize, cap: usize },

    #[error("monomial feature count {count} exceeds cap {cap}")]
    FeatureOverflow { count: usize, cap: usize },

    #[error("denominator not positive on F: D(x) = {value} at x = {x:?}")]
    NonPositiveDenominator { x: Vec<u8>, value: f64 },

    #[error("degenerate denominator subset found: indices {indices:?} have zero variance")]
    DegenerateSubset { indices: Vec<usize> },

    #[error("feasibility probe stalled; arrangement data may be ill-conditioned")]
    LpStall,
}

pub type Result<T> = std::result::Result<T, CoreError>;

use thiserror::Error;

/// Errors raised by the exact engines, the simulator and the experiment layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {dim} is too small: transient walks need d >= 3")]
    DimensionTooSmall { dim: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("step law is not symmetric at {point}: p(x) = {p}, p(-x) = {p_neg}")]
    AsymmetricLaw { point: String, p: f64, p_neg: f64 },

    #[error("step law is not aperiodic: its support generates a sublattice of index {index} (rank {rank})")]
    NotAperiodic { rank: usize, index: u128 },

    #[error("bad probabilities: {0}")]
    BadProbabilities(String),

    #[error("ball of radius {radius} would hold more than {cap} points")]
    RadiusTooLarge { radius: f64, cap: usize },

    #[error("characteristic function reaches 1 at theta = {theta:?} (1 - phi = {gap:e})")]
    SpectrumDegenerate { theta: Vec<f64>, gap: f64 },

    #[error("quadrature did not reach tolerance {tol:e} (best error estimate {achieved:e})")]
    NoConvergence { tol: f64, achieved: f64 },

    #[error("truncation box leaks {leakage:e} of probability mass (limit 1e-12)")]
    BoxTooSmall { leakage: f64 },

    #[error("no Green value tabulated for {0}")]
    MissingGreenValue(String),

    #[error("the Green asymptote is undefined at the origin")]
    OriginNotAllowed,

    #[error("v = {v} outside the admissible window ({lo}, {hi})")]
    OutOfDomain { v: f64, lo: f64, hi: f64 },

    #[error("local-time field exceeded its cap of {cap} cells")]
    MemoryCap { cap: usize },

    #[error("walk left the packable coordinate range (|x_i| <= {limit})")]
    OutOfPackableRange { limit: i64 },

    #[error("no profile constants tabulated for {0}")]
    MissingConstants(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("archive error: {0}")]
    Archive(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

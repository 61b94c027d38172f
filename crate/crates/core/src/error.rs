use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dose {0} is outside [0, 1]")]
    DoseOutOfRange(f64),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("calibration infeasible for {family}: {reason}")]
    CalibrationInfeasible { family: String, reason: String },

    #[error("threshold {threshold} is never reached (maximum effect {max})")]
    ThresholdNotReached { threshold: f64, max: f64 },

    #[error("invalid sigmoid Emax parameters: {0}")]
    InvalidTheta(String),

    #[error("invalid dose grid: {0}")]
    InvalidGrid(String),

    #[error("index {index} is not an interior grid point (M = {m})")]
    NotInterior { index: usize, m: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error("historical data supplied but the point carries no (a, r)")]
    MissingHeterogeneity,

    #[error("oracle grid has {points} points, above the limit of {limit}")]
    GridTooLarge { points: u128, limit: u128 },

    #[error("no feasible point on the oracle grid")]
    NoFeasiblePoint,

    #[error("degenerate point: {0}")]
    DegeneratePoint(String),

    #[error("alpha * R = {product} is below 5; too few replicates to resolve the quantile")]
    InsufficientReplicates { product: f64 },

    #[error("alpha = {0} must lie in (0, 0.5)")]
    InvalidAlpha(f64),

    #[error("dose {x} is outside the fitted range [{lo}, {hi}]")]
    Extrapolation { x: f64, lo: f64, hi: f64 },

    #[error("scenario 4 has no historical trial")]
    NoHistoricalTrial,

    #[error("empty record set: {0}")]
    EmptyRecords(String),

    #[error("invalid scenario configuration: {0}")]
    InvalidScenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

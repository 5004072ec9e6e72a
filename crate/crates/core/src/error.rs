use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("inputs were built on different topologies")]
    TopologyMismatch,

    #[error("invalid transition kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid reward function: {0}")]
    InvalidReward(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quasi-likelihood solver did not converge after {iterations} iterations (score residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("infeasible transition band: sum of lower bounds {lower_sum}, sum of upper bounds {upper_sum}")]
    InfeasibleBand { lower_sum: f64, upper_sum: f64 },

    #[error("instance too large for exhaustive search: {0}")]
    InstanceTooLarge(String),

    #[error("estimates for pair {pair} were never solved although its log holds {visits} observations")]
    UnsolvedEstimates { pair: usize, visits: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

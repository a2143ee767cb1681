//! Error type shared by the engine, the oracle and the harness.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RescaleError {
    /// Malformed input to a numeric routine (non-finite coordinate, empty
    /// vector, dimension mismatch and friends).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A density was non-positive or failed to normalize where one was needed.
    #[error("invalid density: {0}")]
    InvalidDensity(String),

    /// A standing assumption of the method was violated (for instance the
    /// killing rate dropped to zero or below on its certification grid).
    #[error("assumption violated: {0}")]
    Assumption(String),

    /// Bad configuration file or inconsistent option combination.
    #[error("configuration error: {0}")]
    Config(String),

    /// The requested dimension is outside what this operation supports.
    #[error("unsupported dimension {0}: {1}")]
    UnsupportedDimension(usize, String),

    /// An iteration failed to reach its tolerance within its cap.
    #[error("no convergence: {0}")]
    NonConvergence(String),

    /// A linear solve met a singular or numerically unusable matrix.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// A time step produced an unusable state (negative mass beyond tolerance,
    /// NaN in a trajectory).
    #[error("step failure: {0}")]
    Step(String),

    /// The diagnostic needed occupation-measure snapshots that the run never
    /// recorded. Lists the wall times that must be scheduled.
    #[error("missing snapshots at wall times {0:?}")]
    MissingSnapshots(Vec<f64>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl RescaleError {
    /// Process exit code used by the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            RescaleError::Config(_)
            | RescaleError::MissingSnapshots(_)
            | RescaleError::UnsupportedDimension(..) => 2,
            _ => 3,
        }
    }
}

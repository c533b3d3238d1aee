//! Crate-wide error taxonomy.

/// Convenience alias used by every fallible operation in the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by configuration, simulation, detection, and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration value or file. The message names the offending
    /// key with its full dotted path.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called with arguments outside its documented domain.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A non-finite quantity appeared while stepping a scenario. Carries the
    /// step index and a JSON snapshot of the state that produced it.
    #[error("numeric fault at step {step}: {quantity} = {value}; state snapshot: {snapshot}")]
    NumericFault {
        step: u64,
        quantity: String,
        value: f64,
        snapshot: String,
    },

    /// The requested observer gain does not stabilize the monitor.
    #[error(
        "observer gain not stabilizing: error-dynamics eigenvalue real part \
         {eigenvalue} is not negative (need g > 0.4)"
    )]
    NotHurwitz { eigenvalue: f64 },

    /// The regression design matrix is rank deficient.
    #[error("degenerate regression data: {0}")]
    DegenerateData(String),

    /// Detector training was attempted on unusable data.
    #[error("training error: {0}")]
    Training(String),

    /// A detector was queried before it was trained or calibrated.
    #[error("detector error: {0}")]
    Detector(String),

    /// Noise calibration against an unusable reference signal.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// One or more scenarios in a sweep failed; the per-item report lists
    /// which ones and why.
    #[error("{failed} of {total} sweep scenarios failed")]
    SweepPartial { failed: usize, total: usize },

    /// A trace or report file could not be parsed back.
    #[error("parse error: {0}")]
    Parse(String),

    /// Underlying filesystem failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

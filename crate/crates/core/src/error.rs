use thiserror::Error;

/// Errors produced anywhere in the imaging chain.
#[derive(Debug, Error)]
pub enum AimError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("constraint violated: {0}")]
    ConstraintViolation(String),

    #[error(
        "baseline {rx_a}->{rx_b} at (u, v) = ({u:.3}, {v:.3}) wavelengths falls outside the u-v grid \
         (half extent {half_extent} bins of {bin_size})"
    )]
    GridOverflow {
        rx_a: usize,
        rx_b: usize,
        u: f64,
        v: f64,
        half_extent: usize,
        bin_size: f64,
    },

    #[error("incompatible grids: {0}")]
    IncompatibleGrid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("receiver {index} carries no usable power and cannot be calibrated")]
    UnrecoverableChannel { index: usize },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AimError>;

impl AimError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        AimError::InvalidArgument(msg.into())
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        AimError::Format {
            what,
            detail: detail.into(),
        }
    }
}

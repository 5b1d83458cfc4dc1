use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The projected point lies strictly inside both turn circles.
    #[error("degenerate curve-straight geometry: {0}")]
    DegenerateGeometry(String),

    #[error("covariance is singular: {0}")]
    SingularCovariance(String),

    #[error("covariance is not positive semidefinite: {0}")]
    NotPositiveSemidefinite(String),

    #[error("time {t} outside spline domain [{t0}, {tf}]")]
    OutsideDomain { t: f64, t0: f64, tf: f64 },

    #[error("speed {speed} below floor {floor}")]
    DegenerateVelocity { speed: f64, floor: f64 },

    #[error("invalid range configuration: {0}")]
    RangeConfig(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

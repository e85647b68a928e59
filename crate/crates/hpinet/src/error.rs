use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum HpiError {
    /// Tensor dimensions incompatible with the requested operation.
    #[error("shape error: {0}")]
    Shape(String),
    /// Patch-division geometry violated (patch larger than the grid, ...).
    #[error("geometry error: {0}")]
    Geometry(String),
    /// API misuse: wrong color space, out-of-range index, empty input.
    #[error("usage error: {0}")]
    Usage(String),
    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Malformed file: bad magic, truncated record, unknown version.
    #[error("format error: {0}")]
    Format(String),
    /// Well-formed file whose contents contradict its own header.
    #[error("integrity error: {0}")]
    Integrity(String),
    /// Non-finite value where the pipeline requires finite numerics.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HpiError>;

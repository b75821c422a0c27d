//! Crate-wide error type.
//!
//! Every fallible operation in the crate returns [`Result`]. The variants
//! mirror the failure classes the public contracts talk about: shape
//! mismatches, numeric domain violations, out-of-range indices, broken
//! caller contracts, bad configs, malformed files, and plain I/O.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All errors surfaced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up (matmul inner dims, elementwise shapes,
    /// non-integral convolution extents, ...).
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A numeric-domain violation (log of a non-positive value, invalid
    /// probability vector, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// An index referred to something that does not exist (class id out of
    /// range, sample index past the dataset end, ...).
    #[error("index out of range: {0}")]
    Index(String),

    /// A caller violated an API contract (backward on a non-scalar, reading
    /// a gradient before backward, empty input where data is required, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A config value or config file is invalid.
    #[error("invalid config: {0}")]
    Config(String),

    /// A file had the wrong format (bad magic, truncated records, ...).
    #[error("format error: {0}")]
    Format(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

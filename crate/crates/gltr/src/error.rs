//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GltrError>;

#[derive(Debug, Error)]
pub enum GltrError {
    /// Operand shapes are incompatible (matmul, conv channel counts, ...).
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A parameter value is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Classifier label does not address an existing identity.
    #[error("label {label} out of range for {num_identities} identities")]
    LabelOutOfRange { label: usize, num_identities: usize },

    /// An operation that needs data received none.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// A binary file did not start with the expected magic bytes.
    #[error("bad magic bytes, expected {expected:?}")]
    BadMagic { expected: [u8; 4] },

    /// A binary file carries a format version this build cannot read.
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    /// A binary file ended before its declared payload.
    #[error("truncated file: {0}")]
    Truncated(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

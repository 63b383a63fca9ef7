use thiserror::Error;

/// Errors raised by tensors, modules, criterions and the serializer.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes (matmul inner extents, elementwise binary ops, ...).
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// Structural mismatch between a module and its input/gradOutput.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid constructor argument or run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Calling convention violated (backward before forward, missing reward, ...).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Out-of-range index (class targets, lookup indices, table selection).
    #[error("index error: {0}")]
    Index(String),

    /// Wrong value kind (tensor where a table was required, or vice versa).
    #[error("type error: {0}")]
    Type(String),

    /// Malformed or incompatible model file.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

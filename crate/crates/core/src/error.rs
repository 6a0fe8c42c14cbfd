use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("tessellation level {0} outside the supported range 0..=4")]
    InvalidLevel(u32),
    #[error("degenerate triangle (area {0:e})")]
    DegenerateFace(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("empty point set")]
    EmptyPointSet,
    #[error("degenerate bounding box")]
    DegenerateBbox,
    #[error("every block was pruned at iteration {0}; check prune threshold and loss weights")]
    AllBlocksPruned(usize),
    #[error("no alive geometry to sample")]
    NoGeometry,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

use thiserror::Error;

/// Errors raised by the reconstruction toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BiqmError {
    #[error("invalid lattice size {0}: need at least 2 sites")]
    InvalidSize(usize),
    #[error("invalid shift {theta} for lattice of size {size}")]
    InvalidShift { theta: usize, size: usize },
    #[error("invalid weight `{name}` = {value}: must be finite and nonnegative")]
    InvalidWeight { name: &'static str, value: f64 },
    #[error("shift k*theta = {shift} wraps around a lattice of size {size}")]
    InvalidRange { shift: usize, size: usize },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("invalid potential: entry {index} is not finite")]
    InvalidPotential { index: usize },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("degenerate spectrum: {} eigenvalue pair(s) closer than tolerance", pairs.len())]
    DegenerateSpectrum { pairs: Vec<(usize, usize)> },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("line search stalled after {backtracks} backtracks")]
    StalledStep { backtracks: usize },
    #[error("empty sample set")]
    EmptySamples,
    #[error("sample position {position} outside lattice of size {size}")]
    SampleOutOfRange { position: usize, size: usize },
}

pub type Result<T> = std::result::Result<T, BiqmError>;

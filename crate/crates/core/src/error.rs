use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid interval [{lo}, {hi}): need 0 <= lo < hi <= 2*pi")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("invalid angle partition: {0}")]
    InvalidPartition(String),

    #[error("matrix is not a valid phase matrix: {0}")]
    InvalidPhaseMatrix(String),

    #[error("matrix is not a valid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("matrix fails positive semidefiniteness: min eigenvalue {min_eig:e} below floor {floor:e}")]
    NotPositive { min_eig: f64, floor: f64 },

    #[error("truncation leakage {leakage:e} exceeds bound {bound:e}")]
    Leakage { leakage: f64, bound: f64 },

    #[error("trace deficit {deficit:e} exceeds {bound:e}; the state is not supported on the truncated space")]
    TraceDeficit { deficit: f64, bound: f64 },

    #[error("Markov kernel is not normalized: max deviation {deviation:e} at theta = {theta}")]
    KernelNormalization { deviation: f64, theta: f64 },

    #[error("parameter state is not diagonal in the number basis (max off-diagonal {max_offdiag:e})")]
    NonDiagonalParameter { max_offdiag: f64 },

    #[error("series did not converge within {terms} terms")]
    NoConvergence { terms: usize },

    #[error("argument {0} outside the supported range")]
    OutOfRange(String),

    #[error("quadrature order {order} too small: need at least {required}")]
    QuadratureOrder { order: usize, required: usize },

    #[error("invalid state parameters: {0}")]
    InvalidState(String),

    #[error("cache format error: {0}")]
    Cache(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

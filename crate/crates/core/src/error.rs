use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("unbound name `{0}`")]
    Unbound(String),
    #[error("expression evaluated to a non-finite value")]
    NonFinite,

    #[error("unknown builtin model `{0}`")]
    UnknownModel(String),
    #[error("unknown parameter override `{0}`")]
    UnknownOverride(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("point ({0}, {1}) lies outside the grid")]
    OutsideGrid(f64, f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("eigensolver did not converge: {0}")]
    NonConvergence(String),
    #[error("not oscillatory: {0}")]
    NotOscillatory(String),
    #[error("no nontrivial real eigenvalue among the computed modes (increase k)")]
    NoRealMode,
    #[error("no trivial eigenvalue within tolerance {0:e}")]
    NoTrivialMode(f64),
    #[error("stationary density has mixed signs (min/max = {0:e})")]
    MixedSignDensity(f64),
    #[error("eigenvalue pairing failed for {0}")]
    PairingFailed(String),

    #[error("phase undefined at the reference node")]
    PhaseUndefined,
    #[error("isostable eigenvector is not real (relative imaginary part {0:e})")]
    NotReal(f64),
    #[error("field has no zero crossing")]
    NoZeroCrossing,
    #[error("{masked} of {total} interior nodes are degenerate")]
    TooManyMasked { masked: usize, total: usize },
    #[error("field line starts in the degenerate region")]
    MaskedStart,

    #[error("invalid simulation settings: {0}")]
    InvalidSimulation(String),
    #[error("observable vanishes at the initial condition")]
    ZeroObservable,
    #[error("fit window: {0}")]
    FitWindow(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numeric,
    Classification,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Stage { source, .. } => source.kind(),
            Syntax { .. } | UnknownFunction(_) | Unbound(_) | UnknownModel(_) | UnknownOverride(_)
            | InvalidModel(_) | InvalidGrid(_) | InvalidSimulation(_) | Io(_) | Json(_) => {
                ErrorKind::Config
            }
            NotOscillatory(_) | NoRealMode | NoTrivialMode(_) => ErrorKind::Classification,
            _ => ErrorKind::Numeric,
        }
    }

    pub(crate) fn at(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

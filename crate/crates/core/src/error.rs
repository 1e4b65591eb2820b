use std::fmt;

/// Pipeline stage names attached to errors surfaced by [`crate::cusum::run_test`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Standardize,
    Transform,
    LongRunCov,
    Invert,
    Cusum,
    CriticalValue,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Standardize => "standardize",
            Stage::Transform => "transform",
            Stage::LongRunCov => "long-run covariance",
            Stage::Invert => "invert",
            Stage::Cusum => "cusum",
            Stage::CriticalValue => "critical value",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty sample")]
    EmptySample,

    #[error("non-finite value at position {0}")]
    NonFinite(usize),

    #[error("zero scale estimate in column {0}")]
    ZeroScale(usize),

    #[error("non-positive input {0} where a positive value is required")]
    NonPositiveInput(f64),

    #[error("matrix is not symmetric: |M[{row},{col}] - M[{col},{row}]| = {diff:e}")]
    Asymmetric { row: usize, col: usize, diff: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("projection direction has zero norm")]
    ZeroDirection,

    #[error("long-run covariance is degenerate (largest eigenvalue {0:e})")]
    DegenerateLrv(f64),

    #[error("matrix is singular")]
    Singular,

    #[error("series too short: {len} observations, at least {min} required")]
    TooShort { len: usize, min: usize },

    #[error("quantile for s = {s}, level = {level} is not tabulated")]
    NotTabulated { s: usize, level: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// The innermost error, with stage wrappers stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait StageExt<T> {
    fn at(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn at(self, stage: Stage) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}

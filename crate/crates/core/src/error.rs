use thiserror::Error;

use crate::duality::CauchyFailure;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor symmetry violated: relative defect {defect:e}")]
    SymmetryViolation { defect: f64 },

    #[error("tensor fails ellipticity: relative eigenvalues [{min:e}, {max:e}] outside [{c0:e}, {c1:e}]")]
    NotElliptic { min: f64, max: f64, c0: f64, c1: f64 },

    #[error("dislocation loop {index} is not closed")]
    OpenLoop { index: usize },

    #[error("dislocation loop {index} is invalid: {reason}")]
    InvalidLoop { index: usize, reason: String },

    #[error("mollification width {delta:e} is narrower than two grid spacings ({min:e})")]
    KernelTooNarrow { delta: f64, min: f64 },

    #[error("dislocation loop {index} comes within {distance:e} of the padded box boundary (needs > {required:e})")]
    LoopTooCloseToBoundary {
        index: usize,
        distance: f64,
        required: f64,
    },

    #[error("grid measure component ({row}, {col}) has mean {mean:e}")]
    NonZeroMean { row: usize, col: usize, mean: f64 },

    #[error("grid measure is not divergence free: normalized residual {residual:e}")]
    NotDivergenceFree { residual: f64 },

    #[error("forcing violates the compatibility condition: skew mean {defect:e}")]
    NotAdmissible { defect: f64 },

    #[error("conjugate gradients stopped after {iterations} iterations at relative residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("approximation schedule not Cauchy after {} stages (last defect {:e})", .0.defects.len() + 1, .0.defects.last().copied().unwrap_or(f64::NAN))]
    NotCauchy(Box<CauchyFailure>),

    #[error("Voigt-Reuss bound violated ({bound}): eigenvalue {eigenvalue:e}")]
    BoundViolation {
        bound: &'static str,
        eigenvalue: f64,
        eigenvector: [f64; 6],
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Invariant,
    Solver,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Io(_) | Error::Json(_) | Error::DimensionMismatch(_) => {
                ErrorClass::Config
            }
            Error::NoConvergence { .. } | Error::NotCauchy(_) => ErrorClass::Solver,
            _ => ErrorClass::Invariant,
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::SymmetryViolation { .. } => "SymmetryViolation",
            Error::NotElliptic { .. } => "NotElliptic",
            Error::OpenLoop { .. } => "OpenLoop",
            Error::InvalidLoop { .. } => "InvalidLoop",
            Error::KernelTooNarrow { .. } => "KernelTooNarrow",
            Error::LoopTooCloseToBoundary { .. } => "LoopTooCloseToBoundary",
            Error::NonZeroMean { .. } => "NonZeroMean",
            Error::NotDivergenceFree { .. } => "NotDivergenceFree",
            Error::NotAdmissible { .. } => "NotAdmissible",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::NotCauchy(_) => "NotCauchy",
            Error::BoundViolation { .. } => "BoundViolation",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
        }
    }

    /// Index of the offending loop, when the error concerns one.
    pub fn loop_index(&self) -> Option<usize> {
        match self {
            Error::OpenLoop { index }
            | Error::InvalidLoop { index, .. }
            | Error::LoopTooCloseToBoundary { index, .. } => Some(*index),
            _ => None,
        }
    }
}

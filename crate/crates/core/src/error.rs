use thiserror::Error;

use crate::dynamics::TrajectoryRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("lattice mismatch between operands")]
    LatticeMismatch,

    #[error("zero field has no interpolation ratio")]
    ZeroField,

    #[error("ball of radius {radius} is not covered by a lattice with cutoff {cutoff}")]
    BallOutsideLattice { radius: usize, cutoff: usize },

    #[error(
        "noise is degenerate: b_s = 0 for some |s| <= {modes}; \
         mixing requires b_s != 0 for every |s| <= N"
    )]
    DegenerateNoise { modes: usize },

    #[error("non-finite state detected at t = {time}")]
    BlowUp {
        time: f64,
        partial: Box<TrajectoryRecord>,
    },

    #[error("ensemble mixes incompatible records: {0}")]
    MixedEnsemble(String),

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("dictionary mismatch: `{0}` vs `{1}`")]
    DictionaryMismatch(String, String),

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

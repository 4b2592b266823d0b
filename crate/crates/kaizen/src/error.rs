//! Crate-wide error type.

use thiserror::Error;

use crate::trainer::CollapseReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter, gradient, or input value is NaN or infinite.
    #[error("non-finite value in segment `{segment}` at index {index}")]
    NonFinite { segment: String, index: usize },

    /// A scalar input was NaN or infinite where a finite value is required.
    #[error("non-finite input value {value}")]
    NonFiniteValue { value: f64 },

    /// Rounding to binary16 overflowed the format's finite range.
    #[error("binary16 overflow: {value} rounds outside +/-65504")]
    Binary16Overflow { value: f64 },

    /// Two parameter vectors do not share a layout.
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("unknown segment `{0}`")]
    UnknownSegment(String),

    /// Half-life is undefined at the frozen (alpha=0) and copy (alpha=1) limits.
    #[error("half-life undefined for alpha = {alpha}")]
    HalfLifeUndefined { alpha: f64 },

    /// The CTC target cannot be aligned to the given number of frames.
    #[error("infeasible CTC target: needs at least {required} frames, got {frames}")]
    InfeasibleTarget { required: usize, frames: usize },

    /// Supervised utterances whose references cannot be aligned.
    #[error("infeasible CTC targets in utterances: {}", ids.join(", "))]
    InfeasibleUtterances { ids: Vec<String> },

    /// The brute-force CTC oracle refuses inputs beyond its enumeration bound.
    #[error("brute-force bounds exceeded: frames={frames} (max 10), vocab={vocab} (max 4)")]
    BruteForceBounds { frames: usize, vocab: usize },

    #[error("blank token (index 0) not allowed in a token sequence")]
    BlankInTokens,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Training collapsed: the teacher's blank ratio exceeded the threshold
    /// for three consecutive evaluations. Carries the metrics history so a
    /// sweep can treat the collapse as a data point.
    #[error("training collapsed at step {}", report.step)]
    Collapse { report: Box<CollapseReport> },

    /// Loss or parameters became non-finite during training.
    #[error("numeric failure at step {step}: {what}")]
    NumericFailure { step: u64, what: String },

    #[error("{path}:{line}: {msg}")]
    DatasetParse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Collapse errors double as sweep data points; everything else is fatal.
    pub fn into_collapse(self) -> std::result::Result<Box<CollapseReport>, Error> {
        match self {
            Error::Collapse { report } => Ok(report),
            other => Err(other),
        }
    }
}

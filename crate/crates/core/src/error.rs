use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("tensor shape {shape:?} holds {expected} elements but {actual} values were given")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: kernel {kernel:?} does not fit padded input {padded:?}")]
    KernelTooLarge {
        op: &'static str,
        kernel: (usize, usize),
        padded: (usize, usize),
    },

    #[error("{op}: computed output extent {extent} is not positive")]
    NonPositiveExtent { op: &'static str, extent: i64 },

    #[error("instance norm needs at least two elements per channel, got {per_channel}")]
    DegenerateVariance { per_channel: usize },

    #[error("log10 of non-positive value {0}")]
    LogOfNonPositive(f64),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this tape")]
    TapeConsumed,

    #[error("{op}: norm {norm:e} is below the zero-norm guard")]
    ZeroNorm { op: &'static str, norm: f64 },

    #[error("{what} has zero power")]
    ZeroPower { what: &'static str },

    #[error("signal of {len} samples is shorter than the required {required}")]
    SignalTooShort { len: usize, required: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model config: block {block}: {reason}")]
    InvalidConfig { block: usize, reason: String },

    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("non-finite gradient for parameter `{0}`")]
    NanGradient(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("split `{0}` is empty")]
    EmptySplit(String),

    #[error("scenario {scenario}: teacher latent {teacher:?} and student latent {student:?} are incompatible ({reason})")]
    ScenarioMismatch {
        scenario: String,
        teacher: [usize; 3],
        student: [usize; 3],
        reason: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

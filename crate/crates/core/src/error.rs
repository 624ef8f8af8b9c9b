use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {0:?}: extents must be positive and match the data length")]
    Shape(Vec<usize>),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("velocity component {0} has zero standard deviation")]
    DegenerateComponent(usize),

    #[error("unsupported dataset: {0}")]
    UnsupportedDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range (limit {limit})")]
    OutOfRange { index: usize, limit: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("communication with rank {rank} failed: {msg}")]
    Communication { rank: usize, msg: String },

    #[error("rank {0} already joined the group")]
    DuplicateRank(usize),

    #[error("timed out: {0}")]
    Timeout(String),

    #[error("missing baseline {0:?}")]
    MissingBaseline(String),

    #[error("no layout to compare with {0}")]
    MissingPair(String),

    #[error("loss diverged at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },

    #[error("worker rank {rank} failed: {msg}")]
    Worker { rank: usize, msg: String },
}

impl Error {
    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Schema {
        path: PathBuf,
        line: u64,
        msg: String,
    },
    #[error("{path}:{line}: unknown zone `{zone}`")]
    UnknownZone {
        path: PathBuf,
        line: u64,
        zone: String,
    },
    #[error("zone `{zone}` is missing {hours} consecutive hours ({from} .. {to}); at most {limit} can be forward-filled")]
    Gap {
        zone: String,
        from: String,
        to: String,
        hours: usize,
        limit: usize,
    },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("feature `{feature}` is constant (max_Cplus = {max_cplus}); constant channels must be zero-filled instead of normalized")]
    DegenerateStats { feature: String, max_cplus: f64 },
    #[error("no normalization statistics for channel `{0}`")]
    MissingStats(String),
    #[error("insufficient data: need {needed}, got {got} ({what})")]
    Insufficient {
        what: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("shape mismatch at {context}: expected {expected:?}, got {got:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("stale or mismatched forward cache: {0}")]
    Cache(String),
    #[error("non-finite gradient in layer {layer} ({param})")]
    NonFinite { layer: usize, param: String },
    #[error("training diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: u64, detail: String },
    #[error("singular regression: {0}")]
    Singular(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: &[usize], got: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }

    /// True for failures caused by numeric blow-up rather than bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::NonFinite { .. })
    }
}

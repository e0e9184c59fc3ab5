use thiserror::Error;

/// Errors surfaced at crate boundaries.
///
/// Contract violations in hot inner loops (dimension mismatches between
/// pre-validated states) are asserts, not variants; everything a caller can
/// plausibly feed in wrong — files, configs, degenerate datasets — is here.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("minibatch must contain at least one sample")]
    EmptyBatch,

    #[error("invalid label {0}: labels must be +1 or -1")]
    InvalidLabel(i64),

    #[error("non-finite feature value in sample")]
    NonFiniteFeature,

    #[error("class prior must lie strictly inside (0, 1), got {0}")]
    DegeneratePrior(f64),

    #[error("dataset {name:?} must contain both classes ({positives} positive, {negatives} negative)")]
    SingleClass {
        name: String,
        positives: usize,
        negatives: usize,
    },

    #[error("target imbalance ratio {target} is unachievable: positive fraction is already {current}")]
    UnachievableRatio { target: f64, current: f64 },

    #[error("dataset too small: {n} samples cannot fill {k} shards")]
    DatasetTooSmall { n: usize, k: usize },

    #[error("AUC is undefined without at least one score from each class")]
    EmptyScoreSet,

    #[error("state layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Attach a human-readable context (usually a path) to an I/O error.
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("perplexity {perplexity} out of range for n = {n} (need 1 < perplexity <= n - 1)")]
    PerplexityOutOfRange { perplexity: f64, n: usize },

    #[error("bandwidth calibration failed for point {index} (achieved perplexity {achieved})")]
    DegenerateRow { index: usize, achieved: f64 },

    #[error("affinity matrix is not symmetric at ({i}, {j}): {a} vs {b}")]
    AsymmetricInput { i: usize, j: usize, a: f64, b: f64 },

    #[error("normalization violated{}: sum = {sum}", row_label(*.row))]
    NormalizationViolation { row: Option<usize>, sum: f64 },

    #[error("invalid affinity matrix: {0}")]
    InvalidAffinities(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite coordinate after iteration {iteration}")]
    NonFiniteUpdate { iteration: usize },

    #[error("embedding diverged at iteration {iteration}: diameter {diameter:e}")]
    Diverged { iteration: usize, diameter: f64 },

    #[error("regime violation at step {t}: {detail}")]
    RegimeViolation { t: usize, detail: String },

    #[error("point {index} has no same-cluster affinity mass")]
    DegenerateCluster { index: usize },

    #[error("invalid cluster assignment: {0}")]
    InvalidAssignment(String),

    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),

    #[error("{path}: parse error at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("scatter plots need a 2-D embedding, got s = {0}")]
    UnsupportedDimension(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization failed: {0}")]
    Serialize(String),
}

fn row_label(row: Option<usize>) -> String {
    match row {
        Some(r) => format!(" at row {r}"),
        None => String::new(),
    }
}

impl Error {
    /// True for the errors that signal a diverging iteration.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::NonFiniteUpdate { .. } | Error::Diverged { .. })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid or incomplete configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument fell outside the domain of an operation (e.g. an action not
    /// in the action space).
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation was called in the wrong lifecycle state.
    #[error("state error: {0}")]
    State(String),

    /// The backend refused to initialize.
    #[error("backend initialization failed: {0}")]
    Initialization(String),

    /// A derivative evaluation produced a non-finite value.
    #[error("non-finite derivative in component {component} ({value})")]
    Numerical { component: usize, value: f64 },

    /// The backend failed while advancing.
    #[error("simulation error: {0}")]
    Simulation(String),

    /// Matrix or vector shapes disagree.
    #[error("shape error: {0}")]
    Shape(String),

    /// A metric is undefined for the given data (e.g. zero steps).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// One or more experiment repeats failed; the others ran to completion.
    #[error("{} of {total} repeats failed: {}", failures.len(), failures.iter().map(|(i, e)| format!("#{i}: {e}")).collect::<Vec<_>>().join("; "))]
    RepeatsFailed {
        total: usize,
        failures: Vec<(usize, String)>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

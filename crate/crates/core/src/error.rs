use thiserror::Error;

/// Errors raised by the manifold learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("format error at row {row}: {message}")]
    Format { row: usize, message: String },

    #[error("insufficient neighborhood around point {point}: {count} point(s) within radius {radius}")]
    InsufficientNeighborhood {
        point: usize,
        radius: f64,
        count: usize,
    },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("neighbor graph is disconnected; component sizes {sizes:?}")]
    Disconnected { sizes: Vec<usize> },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, with stage labels peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}

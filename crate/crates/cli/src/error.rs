use std::fmt;

/// CLI failure, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or parameters: exit 2.
    Usage(String),
    /// Anything that failed while running: exit 1.
    Runtime { stage: &'static str, source: anyhow::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime { .. } => 1,
        }
    }

    pub fn runtime(stage: &'static str, source: impl Into<anyhow::Error>) -> Self {
        CliError::Runtime {
            stage,
            source: source.into(),
        }
    }

    /// Runtime error from the library; a stage recorded by the pipeline wins
    /// over the command-level one.
    pub fn core(stage: &'static str, err: manistream::Error) -> Self {
        match err {
            manistream::Error::Parameter(msg) => CliError::Usage(msg),
            manistream::Error::Stage { stage: inner, source } => CliError::Runtime {
                stage: inner,
                source: anyhow::Error::new(*source),
            },
            other => CliError::runtime(stage, other),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Runtime { stage, source } => write!(f, "error in stage '{stage}': {source:#}"),
        }
    }
}

impl std::error::Error for CliError {}

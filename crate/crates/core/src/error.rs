use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violated an operation's precondition.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// Evaluation hit a removable or genuine singularity of the schedule
    /// (alpha or sigma equal to zero where it is divided by).
    #[error("singularity: {0}")]
    Singularity(String),

    /// Both tail statistics vanished, so the tail index difference is undefined.
    #[error("degenerate tail: {0}")]
    DegenerateTail(String),

    /// Configuration failed validation. Holds every offending key.
    #[error("config error: {}", .0.join("; "))]
    Config(Vec<String>),

    /// A checkpoint or data file could not be decoded.
    #[error("load error in `{field}`: {msg}")]
    Load { field: String, msg: String },

    /// An experiment stage failed; artifacts written before it are kept.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for configuration problems, including those surfaced inside a stage.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Param(msg.into()))
}

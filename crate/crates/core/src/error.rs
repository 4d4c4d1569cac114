use thiserror::Error;

/// Failure classes shared by every module. The CLI maps them onto exit codes.
#[derive(Debug, Error)]
pub enum WonnError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint size error: {0}")]
    Size(String),

    #[error("unsupported checkpoint version {found} (max supported {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, WonnError>;

impl WonnError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        WonnError::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        WonnError::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        WonnError::Numeric(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        WonnError::Config(msg.into())
    }

    /// True for errors caused by bad user input (config, schema, preconditions)
    /// rather than by a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            WonnError::Config(_)
                | WonnError::Precondition(_)
                | WonnError::Domain(_)
                | WonnError::Shape(_)
                | WonnError::Json(_)
        )
    }
}

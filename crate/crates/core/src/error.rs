use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape inference produced an empty or inconsistent extent.
    #[error("shape error at {layer}: {reason}")]
    Shape { layer: String, reason: String },

    /// A layer or block geometry violates a divisibility or range rule.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller supplied arguments that do not fit the operation.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Malformed serialized data (tensor files, graph JSON).
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(layer: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by the requested configuration rather than by I/O or data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Shape { .. } | Error::Config(_) | Error::Argument(_)
        )
    }
}

use thiserror::Error;

/// Errors produced anywhere in the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("group element {element} is not compatible with representation {rep}")]
    IncompatibleElement { element: String, rep: String },

    #[error("aliasing: {samples} samples cannot resolve {coefficients} Fourier coefficients")]
    Aliasing { samples: usize, coefficients: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("representation mismatch: {0}")]
    RepMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("scene generation failed after {0} attempts")]
    GenerationExhausted(usize),

    #[error("tool is not on the table")]
    ToolNotOnTable,

    #[error("action out of bounds: {0}")]
    ActionOutOfBounds(String),

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Every variant is a domain error: the CLI maps all of them to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("dangling reference: {kind} id {id} does not exist")]
    Referential { kind: &'static str, id: i64 },
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("unsupported region shape {0:?}; only polygons are accepted")]
    UnsupportedShape(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("normal equations are singular; use a positive penalty")]
    Singular,
    #[error("undefined metric: {0}")]
    Domain(String),
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}
macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use shape_err;

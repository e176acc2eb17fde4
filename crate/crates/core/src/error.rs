use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("duplicate product id {0} in catalog")]
    DuplicateProduct(u64),

    #[error("duplicate trip id {0}")]
    DuplicateTrip(u64),

    #[error("trip {trip_id} references product {product_id} which is not in the catalog")]
    UnknownItem { trip_id: u64, product_id: u64 },

    /// A configuration value is out of range. `field` is the snake_case name
    /// of the offending setting.
    #[error("invalid value for {field}: {message}")]
    InvalidConfig {
        field: &'static str,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unknown id {id}{}", format_suggestions(.suggestions))]
    UnknownId { id: String, suggestions: Vec<String> },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn format_suggestions(suggestions: &[String]) -> String {
    if suggestions.is_empty() {
        String::new()
    } else {
        format!("; did you mean: {}", suggestions.join(", "))
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig { .. } | Error::InvalidArgument(_)
        )
    }
}

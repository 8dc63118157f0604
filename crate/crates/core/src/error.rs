use std::path::PathBuf;

use crate::raster::Dims;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("value {value} out of range at pixel {index}")]
    Range { index: usize, value: f64 },

    #[error("{0} is out of range")]
    Parameter(String),

    #[error("ambiguous mask value {value} at pixel {index}: masks must contain only 0 and 255")]
    AmbiguousMask { index: usize, value: u8 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: Dims, found: Dims },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("cannot aggregate an empty set of records")]
    EmptyAggregate,

    #[error("unknown label {0:?}: only \"hand\" regions are accepted")]
    Label(String),

    #[error("group {group} has {size} items, {needed} requested")]
    Sample {
        group: String,
        size: usize,
        needed: usize,
    },

    #[error("unknown profile {0:?}")]
    UnknownProfile(String),

    #[error("item {id}: {source}")]
    Item {
        id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Image {
            path: path.into(),
            message: err.to_string(),
        }
    }

    pub(crate) fn in_item(self, id: &str) -> Self {
        Error::Item {
            id: id.to_string(),
            source: Box::new(self),
        }
    }

    /// Strips item annotations down to the underlying cause.
    pub fn root(&self) -> &Error {
        match self {
            Error::Item { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures reading or decoding files, as opposed to bad data or arguments.
    pub fn is_io_or_format(&self) -> bool {
        matches!(
            self.root(),
            Error::Io { .. } | Error::Image { .. } | Error::Format(_)
        )
    }
}

use std::path::PathBuf;

use crate::bundle::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic {found:?}, expected \"TGU1\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: truncated payload, expected {expected} bytes but found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: unsupported dtype code {code}")]
    UnsupportedDtype { path: PathBuf, code: u32 },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("malformed tensor: {0}")]
    Shape(String),

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("bundle failed validation: {}", format_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("row {row} has zero norm")]
    ZeroNorm { row: usize },

    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },

    #[error("non-finite loss at adaptation step {step}")]
    NonFiniteLoss { step: usize },

    #[error("text item {id} is missing its {field}")]
    MissingEmbedding { id: String, field: &'static str },

    #[error("class {class} has no descriptors")]
    NoDescriptors { class: String },

    #[error("bundle has no class_name items")]
    NoClasses,

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("video {video_id}: {source}")]
    Video {
        video_id: String,
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

    pub fn in_video(self, video_id: &str) -> Self {
        Error::Video {
            video_id: video_id.to_string(),
            source: Box::new(self),
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

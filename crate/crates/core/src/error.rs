use std::path::PathBuf;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("validation failed: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("ABC parse error in tune X:{tune} at offset {offset}: {message}")]
    AbcParse {
        tune: u32,
        offset: usize,
        message: String,
    },

    #[error("unsupported schema version {found:?} (expected {expected:?})")]
    Version { found: String, expected: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported feature: {0}")]
    Unsupported(String),

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("malformed variable-length quantity at offset {0}")]
    MalformedVlq(usize),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("too many melodic tracks: {0} (at most 15 channels are available besides the drum channel)")]
    ChannelExhaustion(usize),

    #[error("concurrent notes at tick {tick} in a monophonic encoding")]
    Polyphony { tick: u64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("archive error: {0}")]
    Archive(String),

    #[error("checksum mismatch for {path}: expected {expected}, got {actual}")]
    Integrity {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("transfer failed for {url}: {message}")]
    Transfer { url: String, message: String },

    #[error("no convertible files in corpus {0}")]
    EmptyCorpus(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("model contract violated: {0}")]
    ModelContract(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Validation(_) => "validation",
            Error::Parse { .. } | Error::AbcParse { .. } => "parse",
            Error::Version { .. } => "version",
            Error::Schema(_) => "schema",
            Error::Format(_) => "format",
            Error::Unsupported(_) => "unsupported",
            Error::Truncated(_) => "truncated",
            Error::MalformedVlq(_) => "malformed_vlq",
            Error::Range(_) => "range",
            Error::ChannelExhaustion(_) => "channel_exhaustion",
            Error::Polyphony { .. } => "polyphony",
            Error::Domain(_) => "domain",
            Error::Archive(_) => "archive",
            Error::Integrity { .. } => "integrity",
            Error::Transfer { .. } => "transfer",
            Error::EmptyCorpus(_) => "empty_corpus",
            Error::Size(_) => "size",
            Error::Config(_) => "config",
            Error::ModelContract(_) => "model_contract",
            Error::Io { .. } => "io",
        }
    }
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic: expected \"ATTNDMP1\", found {found:?}")]
    BadMagic { found: Vec<u8> },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("size mismatch: expected {expected} bytes, file has {actual} bytes")]
    SizeMismatch { expected: u64, actual: u64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("sequencing error: {0}")]
    Sequencing(String),

    #[error("{axis} index {index} out of range (len {len})")]
    Bounds {
        axis: &'static str,
        index: usize,
        len: usize,
    },

    #[error(
        "checksum mismatch in chunk (step {step}, block {block}): stored {stored:#010x}, computed {computed:#010x}"
    )]
    Integrity {
        step: usize,
        block: usize,
        stored: u32,
        computed: u32,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png encoding failed: {0}")]
    Png(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}

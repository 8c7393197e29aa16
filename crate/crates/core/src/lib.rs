//! Daily city mobility networks: construction from raw trip records,
//! generative models (gravity, radiation, and a convolutional GAN), and a
//! pairwise-distribution evaluation protocol for judging how realistic
//! generated networks are.
//!
//! The crate is organised around a fixed spatial tessellation (by default an
//! 8x8 grid of square tiles, 64 nodes). A mobility network for one calendar
//! day is a 64x64 nonnegative matrix whose (i, j) entry counts trips from
//! tile i to tile j. Everything else: ingestion, baseline generators, the
//! GAN, and the evaluation metrics, operates on sets of such matrices.

pub mod baselines;
pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod mogan;
pub mod net;
pub mod nn;

use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

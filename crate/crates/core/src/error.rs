use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

/// Every failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing manifest at {0}")]
    MissingManifest(PathBuf),
    #[error("payload/manifest mismatch: {0}")]
    PayloadMismatch(String),
    #[error("unknown band name `{0}`")]
    UnknownBand(String),
    #[error("invalid band table: {0}")]
    BandTable(String),
    #[error("timestamps not strictly increasing at index {0}")]
    NonMonotonicTimestamps(usize),
    #[error("empty time axis")]
    EmptyTimeAxis,
    #[error("non-finite value at t={t}, band {band}")]
    NonFinite { t: usize, band: String },
    #[error("unparseable processing baseline `{0}`")]
    Baseline(String),
    #[error("unsupported resolution pair {src} m -> {dst} m")]
    Resolution { src: f64, dst: f64 },
    #[error("invalid normalization: {0}")]
    Normalization(String),
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-binary mask value {0}")]
    NonBinary(u8),
    #[error("invalid scene parameters: {0}")]
    InvalidParams(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("missing bands for combination {combo}: {missing}")]
    MissingBands { combo: String, missing: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("series error: {0}")]
    Series(String),
    #[error("no series record within tolerance of {0}")]
    UnmatchedDate(NaiveDate),
    #[error("config error: {0}")]
    Config(String),
    #[error("missing inputs: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingInputs(Vec<PathBuf>),
    #[error("i/o error at {path}: {source}")]
    PathIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error("png encoding: {0}")]
    Png(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::PathIo {
            path: path.into(),
            source,
        })
    }
}

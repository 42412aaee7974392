use std::path::PathBuf;

use thiserror::Error;

use crate::sample::StemName;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("spectrogram kind mismatch: expected {expected}, got {actual}")]
    KindMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("segment out of range: need {needed} samples from offset {offset}, clip has {available}")]
    SegmentOutOfRange {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("infeasible split: {artists} artists for {parts} non-empty parts")]
    InfeasibleSplit { artists: usize, parts: usize },

    #[error("target genre {0:?} has no tracks in the manifest")]
    MissingGenre(String),

    #[error("track {track:?} has no {stem} stem")]
    MissingStem { track: String, stem: StemName },

    #[error("no estimate for source {0}")]
    MissingSource(StemName),

    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),

    #[error("non-finite value in {layer}")]
    Numeric { layer: String },

    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("track {0:?} is silent")]
    SilentTrack(String),

    #[error("alignment failed: correlation peak {peak:.4} below {threshold}")]
    AlignmentFailed { peak: f64, threshold: f64 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("need at least 2 finite pairs, got {0}")]
    InsufficientPairs(usize),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}

//! Loading features, labels, posterior grids and manifests from disk.

mod dataset;
mod manifest;
pub mod npy;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::matrix::MatrixError;

pub use dataset::{assemble_dataset, load_domain, AssembleOptions, Dataset, Posteriors};
pub use manifest::{load_manifest, Candidate, Manifest, MetricDirection, PosteriorSource, TaskKind};
pub use npy::{read_array, read_npy, write_array, write_npy, NpyArray};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("not an npy file (bad magic)")]
    BadMagic,
    #[error("unsupported npy version {major}.{minor}")]
    UnsupportedVersion { major: u8, minor: u8 },
    #[error("malformed npy header: {0}")]
    BadHeader(String),
    #[error("unsupported dtype '{0}' (expected '<f4' or '<f8')")]
    UnsupportedDtype(String),
    #[error("fortran-order arrays are not supported")]
    FortranOrderUnsupported,
    #[error("arrays of rank {0} are not supported (expected 1 or 2)")]
    UnsupportedRank(usize),
    #[error("payload has {found} bytes, header promises {expected}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{path}: {source}")]
    Matrix { path: PathBuf, source: MatrixError },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("duplicate candidate id '{0}'")]
    DuplicateCandidateId(String),
    #[error("unknown candidate '{0}'")]
    UnknownCandidate(String),
    #[error("utterance mismatch: {0}")]
    UttIdMismatch(String),
    #[error("utterance '{utt_id}': posterior has {posteriors} frames, features have {features}")]
    FrameCountMismatch { utt_id: String, features: usize, posteriors: usize },
    #[error("feature dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid labels: {0}")]
    InvalidLabels(String),
    #[error("invalid posterior grid: {0}")]
    InvalidPosterior(String),
    #[error("candidate '{0}' has no posteriors; supply a posterior directory or \"uniform\"")]
    MissingPosteriors(String),
}

impl IngestError {
    pub(crate) fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            return IngestError::MissingFile(path.as_ref().to_path_buf());
        }
        IngestError::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub(crate) fn matrix(path: impl AsRef<Path>, source: MatrixError) -> Self {
        IngestError::Matrix { path: path.as_ref().to_path_buf(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LabeledUtterance {
    pub utt_id: String,
    pub labels: Vec<usize>,
}

/// Per-utterance label sequences over a vocabulary of `vocab_size` symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelData {
    pub utterances: Vec<LabeledUtterance>,
    pub vocab_size: usize,
}

impl LabelData {
    pub fn new(utterances: Vec<LabeledUtterance>, vocab_size: usize, task: TaskKind) -> Result<Self, IngestError> {
        if vocab_size == 0 {
            return Err(IngestError::InvalidLabels("vocabulary size must be positive".into()));
        }
        for u in &utterances {
            if let Some(&l) = u.labels.iter().find(|&&l| l >= vocab_size) {
                return Err(IngestError::InvalidLabels(format!(
                    "utterance '{}' has label {l} outside vocabulary of size {vocab_size}",
                    u.utt_id
                )));
            }
            match task {
                TaskKind::Sequence if u.labels.is_empty() => {
                    return Err(IngestError::InvalidLabels(format!("utterance '{}' has no labels", u.utt_id)));
                }
                TaskKind::Classification if u.labels.len() != 1 => {
                    return Err(IngestError::InvalidLabels(format!(
                        "classification utterance '{}' has {} labels, expected exactly one",
                        u.utt_id,
                        u.labels.len()
                    )));
                }
                _ => {}
            }
        }
        Ok(Self { utterances, vocab_size })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

/// Reads a labels JSONL file: one `{"utt_id": ..., "labels": [...]}` per line.
pub fn read_labels_jsonl(path: &Path) -> Result<Vec<LabeledUtterance>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let u: LabeledUtterance = serde_json::from_str(line)
            .map_err(|e| IngestError::Parse(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        if !seen.insert(u.utt_id.clone()) {
            return Err(IngestError::UttIdMismatch(format!(
                "utterance id '{}' repeated in {}",
                u.utt_id,
                path.display()
            )));
        }
        out.push(u);
    }
    Ok(out)
}

/// A `T x (V+1)` grid of per-frame natural-log posteriors; column `V` is blank.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrid {
    log_probs: Vec<f64>,
    frames: usize,
    vocab_size: usize,
}

const ROW_NORM_TOL: f64 = 1e-4;
const POSITIVE_TOL: f64 = 1e-6;

impl PosteriorGrid {
    /// Validates that every row is a log-distribution. `-inf` entries are
    /// allowed and mean probability zero.
    pub fn new(frames: usize, vocab_size: usize, log_probs: Vec<f64>) -> Result<Self, IngestError> {
        let width = vocab_size + 1;
        if frames == 0 {
            return Err(IngestError::InvalidPosterior("grid has no frames".into()));
        }
        if log_probs.len() != frames * width {
            return Err(IngestError::InvalidPosterior(format!(
                "{} values do not fill {frames}x{width}",
                log_probs.len()
            )));
        }
        for (t, row) in log_probs.chunks_exact(width).enumerate() {
            if let Some(v) = row.iter().find(|v| v.is_nan() || **v > POSITIVE_TOL) {
                return Err(IngestError::InvalidPosterior(format!("frame {t}: entry {v} is not a log-probability")));
            }
            let lse = log_sum_exp(row);
            if !(lse.abs() <= ROW_NORM_TOL) {
                return Err(IngestError::InvalidPosterior(format!("frame {t}: row log-sum-exp is {lse}, expected 0")));
            }
        }
        Ok(Self { log_probs, frames, vocab_size })
    }

    pub fn from_npy(arr: NpyArray, vocab_size: usize) -> Result<Self, IngestError> {
        let (t, w) = arr.dims2();
        if arr.shape.len() != 2 || w != vocab_size + 1 {
            return Err(IngestError::InvalidPosterior(format!(
                "shape {:?} does not match T x {}",
                arr.shape,
                vocab_size + 1
            )));
        }
        Self::new(t, vocab_size, arr.data)
    }

    /// Log-posteriors `log(1/(V+1))` on every entry.
    pub fn uniform(frames: usize, vocab_size: usize) -> Result<Self, IngestError> {
        let w = vocab_size + 1;
        Self::new(frames, vocab_size, vec![-(w as f64).ln(); frames * w])
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn blank(&self) -> usize {
        self.vocab_size
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let w = self.vocab_size + 1;
        &self.log_probs[t * w..(t + 1) * w]
    }

    pub fn get(&self, t: usize, sym: usize) -> f64 {
        self.log_probs[t * (self.vocab_size + 1) + sym]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.log_probs
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Sequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricDirection {
    LowerBetter,
    HigherBetter,
}

/// Where a candidate's posterior grids come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PosteriorSource {
    /// Directory holding `<utt_id>.npy` grids.
    Dir(PathBuf),
    /// No grids; alignments fall back to length-proportional segmentation.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: String,
    /// A directory of `<utt_id>.npy` files, or one 2-D file with a row per utterance.
    pub features: PathBuf,
    pub labels: PathBuf,
    pub posteriors: Option<PosteriorSource>,
    pub ground_truth_metric: Option<f64>,
    pub metric_direction: Option<MetricDirection>,
    /// Overrides the manifest-level source features for this candidate.
    pub source_features: Option<PathBuf>,
    pub vocab_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub task_kind: TaskKind,
    pub candidates: Vec<Candidate>,
    pub source_features: Option<PathBuf>,
    pub vocab_size: Option<usize>,
    pub base_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    task_kind: TaskKind,
    candidates: Vec<RawCandidate>,
    #[serde(default)]
    source_features: Option<String>,
    #[serde(default)]
    vocab_size: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCandidate {
    id: String,
    features: String,
    labels: String,
    #[serde(default)]
    posteriors: Option<String>,
    #[serde(default)]
    ground_truth_metric: Option<f64>,
    #[serde(default)]
    metric_direction: Option<MetricDirection>,
    #[serde(default)]
    source_features: Option<String>,
    #[serde(default)]
    vocab_size: Option<usize>,
}

const UNIFORM: &str = "uniform";

impl Manifest {
    pub fn candidate(&self, id: &str) -> Result<&Candidate, IngestError> {
        self.candidates.iter().find(|c| c.id == id).ok_or_else(|| IngestError::UnknownCandidate(id.to_string()))
    }

    /// Source-domain features for a candidate, if any are declared.
    pub fn source_for<'a>(&'a self, candidate: &'a Candidate) -> Option<&'a Path> {
        candidate.source_features.as_deref().or(self.source_features.as_deref())
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, IngestError> {
        let raw: RawManifest = serde_json::from_str(text).map_err(|e| IngestError::Parse(e.to_string()))?;
        if raw.candidates.is_empty() {
            return Err(IngestError::Parse("manifest lists no candidates".into()));
        }
        let resolve = |p: &str| -> PathBuf {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };

        let mut seen = HashSet::new();
        let mut candidates = Vec::with_capacity(raw.candidates.len());
        for c in raw.candidates {
            if !seen.insert(c.id.clone()) {
                return Err(IngestError::DuplicateCandidateId(c.id));
            }
            if c.vocab_size == Some(0) {
                return Err(IngestError::Parse(format!("candidate '{}': vocab_size must be positive", c.id)));
            }
            if c.ground_truth_metric.is_some_and(|m| !m.is_finite()) {
                return Err(IngestError::Parse(format!("candidate '{}': ground_truth_metric must be finite", c.id)));
            }
            let posteriors = c.posteriors.as_deref().map(|p| {
                if p == UNIFORM {
                    PosteriorSource::Uniform
                } else {
                    PosteriorSource::Dir(resolve(p))
                }
            });
            candidates.push(Candidate {
                features: resolve(&c.features),
                labels: resolve(&c.labels),
                posteriors,
                ground_truth_metric: c.ground_truth_metric,
                metric_direction: c.metric_direction,
                source_features: c.source_features.as_deref().map(resolve),
                vocab_size: c.vocab_size,
                id: c.id,
            });
        }
        if raw.vocab_size == Some(0) {
            return Err(IngestError::Parse("vocab_size must be positive".into()));
        }
        Ok(Manifest {
            task_kind: raw.task_kind,
            candidates,
            source_features: raw.source_features.as_deref().map(resolve),
            vocab_size: raw.vocab_size,
            base_dir: base_dir.to_path_buf(),
        })
    }

    /// Checks that every referenced path exists.
    pub fn check_files(&self) -> Result<(), IngestError> {
        let exists = |p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(IngestError::MissingFile(p.to_path_buf()))
            }
        };
        if let Some(s) = &self.source_features {
            exists(s)?;
        }
        for c in &self.candidates {
            exists(&c.features)?;
            exists(&c.labels)?;
            if let Some(PosteriorSource::Dir(d)) = &c.posteriors {
                exists(d)?;
            }
            if let Some(s) = &c.source_features {
                exists(s)?;
            }
        }
        Ok(())
    }
}

/// Reads and validates a manifest. Relative paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Manifest, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let m = Manifest::parse(&text, &base)?;
    m.check_files()?;
    Ok(m)
}

use std::path::Path;

use super::manifest::{Candidate, Manifest, PosteriorSource, TaskKind};
use super::npy::{read_array, read_npy};
use super::{read_labels_jsonl, IngestError, LabelData, PosteriorGrid};
use crate::matrix::FeatureMatrix;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AssembleOptions {
    /// Replace each utterance's frames by their arithmetic mean (a `1 x D` row).
    pub pool_mean: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Posteriors {
    Grids(Vec<PosteriorGrid>),
    Uniform,
}

/// One candidate's target-task data, utterances in labels-file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub candidate_id: String,
    pub task_kind: TaskKind,
    pub features: Vec<FeatureMatrix>,
    pub labels: LabelData,
    pub posteriors: Option<Posteriors>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.features[0].cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.labels.vocab_size
    }
}

/// Loads a candidate's features, labels and posteriors and pairs them by
/// utterance id.
pub fn assemble_dataset(
    manifest: &Manifest,
    candidate_id: &str,
    opts: AssembleOptions,
) -> Result<Dataset, IngestError> {
    let cand = manifest.candidate(candidate_id)?;
    let utts = read_labels_jsonl(&cand.labels)?;
    if utts.is_empty() {
        return Err(IngestError::InvalidLabels(format!("{} has no utterances", cand.labels.display())));
    }

    let mut features = load_candidate_features(cand, &utts.iter().map(|u| u.utt_id.as_str()).collect::<Vec<_>>())?;
    check_dims(&features, &cand.id)?;

    let explicit_vocab = cand.vocab_size.or(manifest.vocab_size);
    let posteriors = match &cand.posteriors {
        None => None,
        Some(PosteriorSource::Uniform) => Some(Posteriors::Uniform),
        Some(PosteriorSource::Dir(dir)) => {
            let mut grids = Vec::with_capacity(utts.len());
            for (u, f) in utts.iter().zip(&features) {
                let path = dir.join(format!("{}.npy", u.utt_id));
                if !path.exists() {
                    return Err(IngestError::UttIdMismatch(format!(
                        "no posterior grid for utterance '{}' in {}",
                        u.utt_id,
                        dir.display()
                    )));
                }
                let arr = read_npy(&path)?;
                let vocab = match explicit_vocab {
                    Some(v) => v,
                    None => arr.dims2().1.checked_sub(1).filter(|v| *v > 0).ok_or_else(|| {
                        IngestError::InvalidPosterior(format!("{}: grid needs at least two columns", path.display()))
                    })?,
                };
                let grid = PosteriorGrid::from_npy(arr, vocab)?;
                if grid.frames() != f.rows() {
                    return Err(IngestError::FrameCountMismatch {
                        utt_id: u.utt_id.clone(),
                        features: f.rows(),
                        posteriors: grid.frames(),
                    });
                }
                grids.push(grid);
            }
            Some(Posteriors::Grids(grids))
        }
    };

    let vocab_size = match (explicit_vocab, &posteriors) {
        (Some(v), _) => v,
        (None, Some(Posteriors::Grids(g))) => g[0].vocab_size(),
        _ => utts.iter().flat_map(|u| u.labels.iter()).max().map_or(1, |m| m + 1),
    };
    if let Some(Posteriors::Grids(g)) = &posteriors {
        if g.iter().any(|g| g.vocab_size() != vocab_size) {
            return Err(IngestError::InvalidPosterior("grid widths disagree across utterances".into()));
        }
    }
    let labels = LabelData::new(utts, vocab_size, manifest.task_kind)?;

    if opts.pool_mean {
        features = features.iter().map(FeatureMatrix::mean_pool).collect();
    }
    Ok(Dataset { candidate_id: cand.id.clone(), task_kind: manifest.task_kind, features, labels, posteriors })
}

fn load_candidate_features(cand: &Candidate, utt_ids: &[&str]) -> Result<Vec<FeatureMatrix>, IngestError> {
    if cand.features.is_dir() {
        utt_ids
            .iter()
            .map(|id| {
                let path = cand.features.join(format!("{id}.npy"));
                if !path.exists() {
                    return Err(IngestError::UttIdMismatch(format!(
                        "no feature file for utterance '{id}' in {}",
                        cand.features.display()
                    )));
                }
                read_array(&path)
            })
            .collect()
    } else {
        // One row per utterance, in labels order.
        let m = read_array(&cand.features)?;
        if m.rows() != utt_ids.len() {
            return Err(IngestError::UttIdMismatch(format!(
                "{} has {} rows but the labels list {} utterances",
                cand.features.display(),
                m.rows(),
                utt_ids.len()
            )));
        }
        (0..m.rows()).map(|i| m.select_rows(&[i]).map_err(|e| IngestError::matrix(&cand.features, e))).collect()
    }
}

fn check_dims(mats: &[FeatureMatrix], what: &str) -> Result<(), IngestError> {
    if let Some(first) = mats.first() {
        if let Some(bad) = mats.iter().find(|m| m.cols() != first.cols()) {
            return Err(IngestError::DimensionMismatch(format!(
                "{what}: utterances have dimensions {} and {}",
                first.cols(),
                bad.cols()
            )));
        }
    }
    Ok(())
}

/// Loads a domain of per-utterance feature matrices: every `.npy` file in a
/// directory (sorted by file name), or a single file.
pub fn load_domain(path: &Path) -> Result<Vec<FeatureMatrix>, IngestError> {
    let mats = if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| IngestError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "npy"))
            .collect();
        files.sort();
        files.iter().map(|p| read_array(p)).collect::<Result<Vec<_>, _>>()?
    } else {
        vec![read_array(path)?]
    };
    if mats.is_empty() {
        return Err(IngestError::MissingFile(path.join("*.npy")));
    }
    check_dims(&mats, &path.display().to_string())?;
    Ok(mats)
}

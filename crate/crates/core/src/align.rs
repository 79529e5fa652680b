//! CTC forced alignment of label sequences to per-frame posteriors.
//!
//! The label sequence `y_1..y_L` is extended with blanks to
//! `[blank, y_1, blank, ..., y_L, blank]` (length `2L+1`). A path visits the
//! extended states monotonically, moving by 0, 1 or 2 states per frame; a
//! 2-step may only skip a blank between two different labels.
//!
//! [`viterbi_align`] returns the single best path and is what the scoring
//! pipeline uses. [`ctc_total_log_prob`] sums over all paths and is kept as a
//! diagnostic. [`brute_force_align`] enumerates label-collapsing frame
//! sequences directly and serves as a test oracle for both.

use thiserror::Error;

use crate::ingest::{log_sum_exp, PosteriorGrid};
use crate::matrix::FeatureMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("label sequence is empty")]
    EmptyLabels,
    #[error("label {label} is outside the vocabulary of size {vocab_size}")]
    LabelOutOfRange { label: usize, vocab_size: usize },
    #[error("{frames} frames cannot emit the labels; at least {required} are needed")]
    InfeasibleLength { frames: usize, required: usize },
    #[error("every alignment path has probability zero")]
    AllPathsImpossible,
    #[error("brute-force enumeration limited to T <= {max_frames} and L <= {max_labels}, got T={frames}, L={labels}")]
    EnumerationTooLarge { frames: usize, labels: usize, max_frames: usize, max_labels: usize },
    #[error("utterance {index}: {features} feature frames but alignment covers {aligned}")]
    FrameCountMismatch { index: usize, features: usize, aligned: usize },
    #[error("{features} feature matrices but {alignments} alignments")]
    UtteranceCountMismatch { features: usize, alignments: usize },
}

/// A label sequence interleaved with blanks: `[b, y_1, b, y_2, ..., y_L, b]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtendedLabelSeq {
    symbols: Vec<usize>,
    blank: usize,
}

impl ExtendedLabelSeq {
    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }

    pub fn blank(&self) -> usize {
        self.blank
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Whether state `s` may be entered directly from `s - 2`.
    fn can_skip_into(&self, s: usize) -> bool {
        s >= 2 && self.symbols[s] != self.blank && self.symbols[s] != self.symbols[s - 2]
    }
}

pub fn extend_labels(labels: &[usize], vocab_size: usize) -> Result<ExtendedLabelSeq, AlignError> {
    check_labels(labels, vocab_size)?;
    let blank = vocab_size;
    let mut symbols = Vec::with_capacity(2 * labels.len() + 1);
    symbols.push(blank);
    for &l in labels {
        symbols.push(l);
        symbols.push(blank);
    }
    Ok(ExtendedLabelSeq { symbols, blank })
}

fn check_labels(labels: &[usize], vocab_size: usize) -> Result<(), AlignError> {
    if labels.is_empty() {
        return Err(AlignError::EmptyLabels);
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= vocab_size) {
        return Err(AlignError::LabelOutOfRange { label, vocab_size });
    }
    Ok(())
}

/// Minimum number of frames that can emit `labels`: one per label plus a
/// separating blank between adjacent repeats.
pub fn required_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_feasible(grid: &PosteriorGrid, labels: &[usize]) -> Result<(), AlignError> {
    check_labels(labels, grid.vocab_size())?;
    let required = required_frames(labels);
    if grid.frames() < required {
        return Err(AlignError::InfeasibleLength { frames: grid.frames(), required });
    }
    Ok(())
}

/// Frame-level assignment of symbols produced by forced alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAlignment {
    /// Symbol per frame; the blank is `V`.
    pub assigned: Vec<usize>,
    pub path_log_prob: f64,
    /// Extended-label state per frame.
    pub state_path: Vec<usize>,
}

impl FrameAlignment {
    pub fn frames(&self) -> usize {
        self.assigned.len()
    }
}

/// Drops blanks and merges runs of the same symbol not separated by a blank.
pub fn collapse(assigned: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = blank;
    for &a in assigned {
        if a != blank && a != prev {
            out.push(a);
        }
        prev = a;
    }
    out
}

/// Best-path forced alignment with backpointers.
///
/// Ties prefer staying in the same state, then advancing by one, then by two.
/// At the last frame a tie between the two accepting states prefers the
/// trailing blank.
pub fn viterbi_align(grid: &PosteriorGrid, labels: &[usize]) -> Result<FrameAlignment, AlignError> {
    check_feasible(grid, labels)?;
    let ext = extend_labels(labels, grid.vocab_size())?;
    let states = ext.len();
    let frames = grid.frames();
    let sym = ext.symbols();

    let mut delta = vec![f64::NEG_INFINITY; states];
    let mut next = vec![f64::NEG_INFINITY; states];
    // back[t * states + s] = predecessor state at t-1
    let mut back = vec![0usize; frames * states];

    delta[0] = grid.get(0, sym[0]);
    delta[1] = grid.get(0, sym[1]);

    for t in 1..frames {
        for s in 0..states {
            let mut best = delta[s];
            let mut arg = s;
            if s >= 1 && delta[s - 1] > best {
                best = delta[s - 1];
                arg = s - 1;
            }
            if ext.can_skip_into(s) && delta[s - 2] > best {
                best = delta[s - 2];
                arg = s - 2;
            }
            next[s] = best + grid.get(t, sym[s]);
            back[t * states + s] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }

    let (mut s, score) = if delta[states - 1] >= delta[states - 2] {
        (states - 1, delta[states - 1])
    } else {
        (states - 2, delta[states - 2])
    };
    if score == f64::NEG_INFINITY {
        return Err(AlignError::AllPathsImpossible);
    }

    let mut state_path = vec![0; frames];
    for t in (0..frames).rev() {
        state_path[t] = s;
        if t > 0 {
            s = back[t * states + s];
        }
    }
    let assigned = state_path.iter().map(|&s| sym[s]).collect();
    Ok(FrameAlignment { assigned, path_log_prob: score, state_path })
}

/// Log of the total probability of all valid paths (the CTC forward sum).
pub fn ctc_total_log_prob(grid: &PosteriorGrid, labels: &[usize]) -> Result<f64, AlignError> {
    check_feasible(grid, labels)?;
    let ext = extend_labels(labels, grid.vocab_size())?;
    let states = ext.len();
    let sym = ext.symbols();

    let mut alpha = vec![f64::NEG_INFINITY; states];
    let mut next = vec![f64::NEG_INFINITY; states];
    alpha[0] = grid.get(0, sym[0]);
    alpha[1] = grid.get(0, sym[1]);
    let mut terms = [0.0; 3];
    for t in 1..grid.frames() {
        for s in 0..states {
            let mut k = 0;
            terms[k] = alpha[s];
            k += 1;
            if s >= 1 {
                terms[k] = alpha[s - 1];
                k += 1;
            }
            if ext.can_skip_into(s) {
                terms[k] = alpha[s - 2];
                k += 1;
            }
            next[s] = log_sum_exp(&terms[..k]) + grid.get(t, sym[s]);
        }
        std::mem::swap(&mut alpha, &mut next);
    }
    let total = log_sum_exp(&alpha[states - 2..]);
    if total == f64::NEG_INFINITY {
        return Err(AlignError::AllPathsImpossible);
    }
    Ok(total)
}

/// Largest frame count [`brute_force_align`] accepts.
pub const ENUM_MAX_FRAMES: usize = 12;
/// Largest label count [`brute_force_align`] accepts.
pub const ENUM_MAX_LABELS: usize = 4;

/// Every length-`T` symbol sequence that collapses to `labels`, with its
/// log-probability under `grid`, in a fixed enumeration order.
pub fn enumerate_paths(grid: &PosteriorGrid, labels: &[usize]) -> Result<Vec<(Vec<usize>, f64)>, AlignError> {
    check_labels(labels, grid.vocab_size())?;
    if grid.frames() > ENUM_MAX_FRAMES || labels.len() > ENUM_MAX_LABELS {
        return Err(AlignError::EnumerationTooLarge {
            frames: grid.frames(),
            labels: labels.len(),
            max_frames: ENUM_MAX_FRAMES,
            max_labels: ENUM_MAX_LABELS,
        });
    }
    let blank = grid.vocab_size();
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(grid.frames());
    enumerate_rec(grid, labels, blank, &mut prefix, 0, 0.0, &mut out);
    Ok(out)
}

// Extends `prefix` one frame at a time, keeping only prefixes whose collapse
// is a prefix of `labels`. `emitted` counts labels produced so far.
fn enumerate_rec(
    grid: &PosteriorGrid,
    labels: &[usize],
    blank: usize,
    prefix: &mut Vec<usize>,
    emitted: usize,
    log_prob: f64,
    out: &mut Vec<(Vec<usize>, f64)>,
) {
    let t = prefix.len();
    if t == grid.frames() {
        if emitted == labels.len() {
            out.push((prefix.clone(), log_prob));
        }
        return;
    }
    let prev = prefix.last().copied().unwrap_or(blank);
    let mut candidates = vec![(blank, emitted)];
    if prev != blank {
        candidates.push((prev, emitted));
    }
    if emitted < labels.len() && labels[emitted] != prev {
        candidates.push((labels[emitted], emitted + 1));
    }
    for (c, e) in candidates {
        prefix.push(c);
        enumerate_rec(grid, labels, blank, prefix, e, log_prob + grid.get(t, c), out);
        prefix.pop();
    }
}

/// Exhaustive maximum over all label-collapsing frame sequences.
pub fn brute_force_align(grid: &PosteriorGrid, labels: &[usize]) -> Result<FrameAlignment, AlignError> {
    let paths = enumerate_paths(grid, labels)?;
    if paths.is_empty() {
        return Err(AlignError::InfeasibleLength { frames: grid.frames(), required: required_frames(labels) });
    }
    let mut best = &paths[0];
    for p in &paths[1..] {
        if p.1 > best.1 {
            best = p;
        }
    }
    if best.1 == f64::NEG_INFINITY {
        return Err(AlignError::AllPathsImpossible);
    }
    let state_path = states_for(&best.0, grid.vocab_size());
    Ok(FrameAlignment { assigned: best.0.clone(), path_log_prob: best.1, state_path })
}

// Recovers extended-label states from a symbol sequence that collapses to
// `labels`.
fn states_for(assigned: &[usize], blank: usize) -> Vec<usize> {
    let mut emitted = 0;
    let mut prev = blank;
    assigned
        .iter()
        .map(|&a| {
            if a == blank {
                prev = a;
                2 * emitted
            } else {
                if a != prev {
                    emitted += 1;
                }
                prev = a;
                2 * emitted - 1
            }
        })
        .collect()
}

/// Length-proportional segmentation used when no posterior grid exists.
///
/// This is one of the (all tied) best paths under a uniform grid: each label
/// receives a contiguous run of frames, with a single blank in front of a
/// repeated label. `path_log_prob` is the uniform-grid path score
/// `-T log(V+1)`.
pub fn uniform_alignment(frames: usize, labels: &[usize], vocab_size: usize) -> Result<FrameAlignment, AlignError> {
    check_labels(labels, vocab_size)?;
    let required = required_frames(labels);
    if frames < required {
        return Err(AlignError::InfeasibleLength { frames, required });
    }
    let blank = vocab_size;
    let n = labels.len();
    let extra = frames - required;
    let mut assigned = Vec::with_capacity(frames);
    let mut state_path = Vec::with_capacity(frames);
    for (k, &label) in labels.iter().enumerate() {
        if k > 0 && labels[k - 1] == label {
            assigned.push(blank);
            state_path.push(2 * k);
        }
        let run = 1 + (k + 1) * extra / n - k * extra / n;
        for _ in 0..run {
            assigned.push(label);
            state_path.push(2 * k + 1);
        }
    }
    debug_assert_eq!(assigned.len(), frames);
    Ok(FrameAlignment { assigned, path_log_prob: -(frames as f64) * ((vocab_size + 1) as f64).ln(), state_path })
}

/// Frame/label pairs pooled across utterances, blanks dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSamples {
    data: Vec<f64>,
    dim: usize,
    pub labels: Vec<usize>,
}

impl AlignedSamples {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `None` when every frame was blank.
    pub fn to_matrix(&self) -> Option<FeatureMatrix> {
        if self.is_empty() {
            return None;
        }
        FeatureMatrix::new(self.len(), self.dim, self.data.clone()).ok()
    }
}

/// Stacks `(feature, label)` for every non-blank frame, in utterance order
/// then frame order.
pub fn frames_to_samples(
    features: &[FeatureMatrix],
    alignments: &[FrameAlignment],
    blank: usize,
) -> Result<AlignedSamples, AlignError> {
    if features.len() != alignments.len() {
        return Err(AlignError::UtteranceCountMismatch { features: features.len(), alignments: alignments.len() });
    }
    let dim = features.first().map_or(0, FeatureMatrix::cols);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (index, (f, a)) in features.iter().zip(alignments).enumerate() {
        if f.rows() != a.frames() {
            return Err(AlignError::FrameCountMismatch { index, features: f.rows(), aligned: a.frames() });
        }
        for (row, &sym) in f.iter_rows().zip(&a.assigned) {
            if sym != blank {
                data.extend_from_slice(row);
                labels.push(sym);
            }
        }
    }
    Ok(AlignedSamples { data, dim, labels })
}

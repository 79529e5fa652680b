//! Sliced 1-Wasserstein distance between source and target latents.
//!
//! Latents are compared frame by frame: at timestep `t` the frame-`t`
//! vectors of every source utterance form one empirical distribution and
//! those of every target utterance form the other. Each pair is projected on
//! `M` random unit directions; with equal sample counts and the L1 ground
//! cost the 1-D distance is the mean absolute difference of order
//! statistics. The score is the median over timesteps. Larger means the two
//! domains are harder to align.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::matrix::FeatureMatrix;
use crate::rng::stream;

const STREAM_DIRECTION: u64 = 1;
const STREAM_SUBSAMPLE: u64 = 2;

#[derive(Debug, Error, PartialEq)]
pub enum SwdError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("zero-dimensional latents")]
    ZeroDimension,
    #[error("{0} domain has no utterances")]
    EmptyDomain(&'static str),
    #[error("dimension mismatch: source D={source_dim}, target D={target_dim}")]
    DimensionMismatch { source_dim: usize, target_dim: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("non-finite value in input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwdConfig {
    /// Number of random projection directions `M`.
    pub n_projections: usize,
    /// Per-timestep batch size `n_b`.
    pub batch_size: usize,
    pub seed: u64,
}

impl SwdConfig {
    /// Ground-cost exponent. Only `p = 1` is supported.
    pub const P_NORM: u32 = 1;
}

impl Default for SwdConfig {
    fn default() -> Self {
        Self { n_projections: 128, batch_size: 256, seed: 42 }
    }
}

/// Equal-sized source and target samples at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatchPair {
    source: FeatureMatrix,
    target: FeatureMatrix,
}

impl LatentBatchPair {
    pub fn new(source: FeatureMatrix, target: FeatureMatrix) -> Result<Self, SwdError> {
        if source.rows() != target.rows() {
            return Err(SwdError::LengthMismatch(source.rows(), target.rows()));
        }
        if source.cols() != target.cols() {
            return Err(SwdError::DimensionMismatch { source_dim: source.cols(), target_dim: target.cols() });
        }
        Ok(Self { source, target })
    }

    pub fn source(&self) -> &FeatureMatrix {
        &self.source
    }

    pub fn target(&self) -> &FeatureMatrix {
        &self.target
    }

    pub fn swapped(&self) -> Self {
        Self { source: self.target.clone(), target: self.source.clone() }
    }
}

/// 1-Wasserstein distance between two equal-size empirical distributions on
/// the line: `(1/n) sum_i |a_(i) - b_(i)|`.
pub fn w1_1d(a: &[f64], b: &[f64]) -> Result<f64, SwdError> {
    if a.len() != b.len() {
        return Err(SwdError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(SwdError::EmptyInput);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(SwdError::NonFinite);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(sorted_w1(&a, &b))
}

fn sorted_w1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn unit_direction<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn project(m: &FeatureMatrix, dir: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(m.iter_rows().map(|r| r.iter().zip(dir).map(|(x, d)| x * d).sum::<f64>()));
    out.sort_by(f64::total_cmp);
}

fn sliced_w1_keyed(pair: &LatentBatchPair, n_projections: usize, seed: u64, t: u64) -> f64 {
    let dim = pair.source.cols();
    let mut ps = Vec::with_capacity(pair.source.rows());
    let mut pt = Vec::with_capacity(pair.target.rows());
    let mut total = 0.0;
    for j in 0..n_projections {
        let dir = unit_direction(&mut stream(seed, &[STREAM_DIRECTION, t, j as u64]), dim);
        project(&pair.source, &dir, &mut ps);
        project(&pair.target, &dir, &mut pt);
        total += sorted_w1(&ps, &pt);
    }
    total / n_projections as f64
}

/// Monte Carlo sliced 1-Wasserstein distance with `cfg.n_projections`
/// directions drawn uniformly on the unit sphere.
pub fn sliced_w1(pair: &LatentBatchPair, cfg: &SwdConfig) -> Result<f64, SwdError> {
    if cfg.n_projections == 0 {
        return Err(SwdError::InvalidConfig("n_projections must be at least 1"));
    }
    if pair.source.cols() == 0 {
        return Err(SwdError::ZeroDimension);
    }
    Ok(sliced_w1_keyed(pair, cfg.n_projections, cfg.seed, 0))
}

/// Median with the mean-of-middle-two convention. `None` on empty input.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwdScore {
    pub score: f64,
    /// Number of timesteps evaluated (shortest utterance length).
    pub t_eval: usize,
    pub per_timestep: Vec<f64>,
    /// Samples per side actually used at each timestep.
    pub batch: usize,
    /// Whether any side was subsampled.
    pub subsampled: bool,
    pub n_projections: usize,
    pub seed: u64,
}

fn frame_batch(utts: &[FeatureMatrix], t: usize, keep: Option<&[usize]>) -> FeatureMatrix {
    let rows: Vec<&[f64]> = match keep {
        Some(idx) => idx.iter().map(|&i| utts[i].row(t)).collect(),
        None => utts.iter().map(|u| u.row(t)).collect(),
    };
    FeatureMatrix::from_rows(&rows).expect("frames share the feature dimension")
}

fn subsample_indices(n: usize, k: usize, seed: u64, t: u64, side: u64) -> Option<Vec<usize>> {
    if k >= n {
        return None;
    }
    let mut rng = stream(seed, &[STREAM_SUBSAMPLE, t, side]);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    Some(idx)
}

/// Median over timesteps of the per-timestep sliced distance.
///
/// Utterances are truncated to the shortest length across both domains.
/// Each timestep uses `min(n_source, n_target, batch_size)` frames per side,
/// subsampling with a seeded stream when a side has more.
pub fn swd_score(source: &[FeatureMatrix], target: &[FeatureMatrix], cfg: &SwdConfig) -> Result<SwdScore, SwdError> {
    if source.is_empty() {
        return Err(SwdError::EmptyDomain("source"));
    }
    if target.is_empty() {
        return Err(SwdError::EmptyDomain("target"));
    }
    if cfg.n_projections == 0 {
        return Err(SwdError::InvalidConfig("n_projections must be at least 1"));
    }
    if cfg.batch_size == 0 {
        return Err(SwdError::InvalidConfig("batch_size must be at least 1"));
    }
    let dim = source[0].cols();
    for m in source.iter().chain(target) {
        if m.cols() != dim {
            return Err(SwdError::DimensionMismatch { source_dim: dim, target_dim: m.cols() });
        }
    }

    let t_eval = source.iter().chain(target).map(FeatureMatrix::rows).min().unwrap_or(0);
    let batch = source.len().min(target.len()).min(cfg.batch_size);
    let subsampled = batch < source.len() || batch < target.len();

    let per_timestep: Vec<f64> = (0..t_eval)
        .into_par_iter()
        .map(|t| {
            let tk = t as u64;
            let keep_s = subsample_indices(source.len(), batch, cfg.seed, tk, 0);
            let keep_t = subsample_indices(target.len(), batch, cfg.seed, tk, 1);
            let pair = LatentBatchPair {
                source: frame_batch(source, t, keep_s.as_deref()),
                target: frame_batch(target, t, keep_t.as_deref()),
            };
            sliced_w1_keyed(&pair, cfg.n_projections, cfg.seed, tk)
        })
        .collect();

    Ok(SwdScore {
        score: median(&per_timestep).ok_or(SwdError::EmptyInput)?,
        t_eval,
        per_timestep,
        batch,
        subsampled,
        n_projections: cfg.n_projections,
        seed: cfg.seed,
    })
}

//! Exact tSNE and the median-point distance baseline.
//!
//! Source and target frames are pooled, embedded jointly in two dimensions,
//! and the score is the Euclidean distance between the coordinate-wise
//! median points of the two domains. Larger means harder transfer.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::matrix::FeatureMatrix;
use crate::rng::stream;
use crate::swd::median;

pub const OUT_DIM: usize = 2;
pub const MAX_POINTS: usize = 5000;
pub const MIN_POINTS: usize = 4;
const ENTROPY_TOL: f64 = 1e-5;
const BISECTION_STEPS: usize = 200;
const P_FLOOR: f64 = 1e-12;
const Q_FLOOR: f64 = 1e-12;
const INIT_SCALE: f64 = 1e-4;
const MIN_GAIN: f64 = 0.01;

const STREAM_INIT: u64 = 1;
const STREAM_SUBSAMPLE: u64 = 2;

#[derive(Debug, Error, PartialEq)]
pub enum TsneError {
    #[error("tSNE needs at least {MIN_POINTS} points, got {0}")]
    TooFewPoints(usize),
    #[error("{n} points exceed the exact tSNE limit of {max}; lower the per-domain point cap (--max-points)")]
    TooManyPoints { n: usize, max: usize },
    #[error("perplexity {perplexity} must be positive and below n - 1 = {limit}")]
    InvalidPerplexity { perplexity: f64, limit: f64 },
    #[error("bandwidth search failed for row {row}: entropy {entropy} vs target {target}")]
    BandwidthSearchFailed { row: usize, entropy: f64, target: f64 },
    #[error("distance matrix must be square with {0} rows")]
    BadDistanceMatrix(usize),
    #[error("{0} domain is empty")]
    EmptyDomain(&'static str),
    #[error("dimension mismatch: source D={source_dim}, target D={target_dim}")]
    DimensionMismatch { source_dim: usize, target_dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneConfig {
    /// `None` selects `min(30, (n - 1) / 3)`.
    pub perplexity: Option<f64>,
    pub iters: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
    /// Frames kept per domain by [`tsne_score`] before embedding.
    pub max_points_per_domain: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: None,
            iters: 1000,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 42,
            max_points_per_domain: 1000,
        }
    }
}

impl TsneConfig {
    pub fn perplexity_for(&self, n: usize) -> f64 {
        self.perplexity.unwrap_or_else(|| (30.0f64).min((n as f64 - 1.0) / 3.0))
    }
}

/// Squared Euclidean distances, row-major `n x n`.
pub fn squared_distances(x: &FeatureMatrix) -> Vec<f64> {
    let n = x.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Shannon entropy (nats) of a probability row, ignoring zeros.
pub fn entropy(row: &[f64]) -> f64 {
    -row.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Conditional affinities `p_{j|i}` with per-row Gaussian bandwidths chosen
/// by bisection so each row's entropy equals `ln(perplexity)`.
///
/// Rows whose off-diagonal distances are all equal are uniform for every
/// bandwidth and are returned as such.
pub fn perplexity_calibration(distances_sq: &[f64], n: usize, perplexity: f64) -> Result<Vec<f64>, TsneError> {
    if distances_sq.len() != n * n || n < 2 {
        return Err(TsneError::BadDistanceMatrix(n));
    }
    let limit = (n - 1) as f64;
    if !(perplexity > 0.0 && perplexity < limit) {
        return Err(TsneError::InvalidPerplexity { perplexity, limit });
    }
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut shifted = vec![0.0; n];
    let mut probs = vec![0.0; n];

    for i in 0..n {
        let row = &distances_sq[i * n..(i + 1) * n];
        let (mut lo_d, mut hi_d) = (f64::INFINITY, f64::NEG_INFINITY);
        for (j, &d) in row.iter().enumerate() {
            if j != i {
                lo_d = lo_d.min(d);
                hi_d = hi_d.max(d);
            }
        }
        let out = &mut p[i * n..(i + 1) * n];
        if hi_d == lo_d {
            for (j, v) in out.iter_mut().enumerate() {
                *v = if j == i { 0.0 } else { 1.0 / limit };
            }
            continue;
        }
        for (j, s) in shifted.iter_mut().enumerate() {
            *s = if j == i { 0.0 } else { row[j] - lo_d };
        }

        let eval = |beta: f64, probs: &mut [f64]| -> f64 {
            let mut sum = 0.0;
            for (j, pj) in probs.iter_mut().enumerate() {
                *pj = if j == i { 0.0 } else { (-beta * shifted[j]).exp() };
                sum += *pj;
            }
            let mut h = 0.0;
            for pj in probs.iter_mut() {
                *pj /= sum;
            }
            for (j, &pj) in probs.iter().enumerate() {
                h += beta * shifted[j] * pj;
            }
            sum.ln() + h
        };

        let (mut beta, mut lo, mut hi) = (1.0 / (hi_d - lo_d).max(f64::MIN_POSITIVE), 0.0, f64::INFINITY);
        let mut h = eval(beta, &mut probs);
        for _ in 0..BISECTION_STEPS {
            let diff = h - target;
            if diff.abs() < 1e-12 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_infinite() { beta * 2.0 } else { 0.5 * (beta + hi) };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
            h = eval(beta, &mut probs);
        }
        if !((h - target).abs() < ENTROPY_TOL) {
            return Err(TsneError::BandwidthSearchFailed { row: i, entropy: h, target });
        }
        let sum: f64 = probs.iter().sum();
        for (o, &v) in out.iter_mut().zip(probs.iter()) {
            *o = v / sum;
        }
    }
    Ok(p)
}

/// Symmetrised joint affinities `(p_{j|i} + p_{i|j}) / 2n`, floored at
/// `1e-12` off the diagonal and renormalised to sum to one.
pub fn joint_probabilities(conditional: &[f64], n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = ((conditional[i * n + j] + conditional[j * n + i]) / denom).max(P_FLOOR);
                p[i * n + j] = v;
                total += v;
            }
        }
    }
    p.iter_mut().for_each(|v| *v /= total);
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// Row-major `n x 2` coordinates.
    pub coords: Vec<f64>,
    pub n: usize,
    pub perplexity: f64,
    /// `(iteration, KL(P || Q))` recorded every 50 iterations and at the end.
    pub kl_trace: Vec<(usize, f64)>,
}

impl Embedding {
    pub fn point(&self, i: usize) -> [f64; 2] {
        [self.coords[2 * i], self.coords[2 * i + 1]]
    }

    pub fn kl_at(&self, iter: usize) -> Option<f64> {
        self.kl_trace.iter().find(|(i, _)| *i == iter).map(|(_, kl)| *kl)
    }

    /// Diagonal of the bounding box of all points.
    pub fn spread(&self) -> f64 {
        (0..OUT_DIM)
            .map(|d| {
                let (lo, hi) = (0..self.n)
                    .map(|i| self.coords[2 * i + d])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                (hi - lo) * (hi - lo)
            })
            .sum::<f64>()
            .sqrt()
    }
}

fn kl_divergence(p: &[f64], y: &[f64], n: usize) -> f64 {
    let mut num = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                z += v;
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[i * n + j];
            if i != j && pij > 0.0 {
                let q = (num[i * n + j] / z).max(Q_FLOOR);
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl
}

// Identical input rows share an initial position, so exact duplicates stay
// together throughout the descent.
fn initial_positions(x: &FeatureMatrix, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, &[STREAM_INIT]);
    let mut first: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut y = vec![0.0; x.rows() * OUT_DIM];
    for i in 0..x.rows() {
        let key: Vec<u64> = x.row(i).iter().map(|v| v.to_bits()).collect();
        match first.get(&key) {
            Some(&j) => {
                y[2 * i] = y[2 * j];
                y[2 * i + 1] = y[2 * j + 1];
            }
            None => {
                first.insert(key, i);
                y[2 * i] = INIT_SCALE * rng.sample::<f64, _>(StandardNormal);
                y[2 * i + 1] = INIT_SCALE * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    y
}

/// Exact tSNE by gradient descent with momentum, per-parameter gains and
/// early exaggeration.
pub fn tsne_embed(x: &FeatureMatrix, cfg: &TsneConfig) -> Result<Embedding, TsneError> {
    let n = x.rows();
    if n < MIN_POINTS {
        return Err(TsneError::TooFewPoints(n));
    }
    if n > MAX_POINTS {
        return Err(TsneError::TooManyPoints { n, max: MAX_POINTS });
    }
    let perplexity = cfg.perplexity_for(n);
    let cond = perplexity_calibration(&squared_distances(x), n, perplexity)?;
    let p = joint_probabilities(&cond, n);

    let mut y = initial_positions(x, cfg.seed);
    let mut update = vec![0.0; n * OUT_DIM];
    let mut gains = vec![1.0f64; n * OUT_DIM];
    let mut grad = vec![0.0; n * OUT_DIM];
    let mut num = vec![0.0; n * n];
    let mut kl_trace = Vec::new();

    for iter in 1..=cfg.iters {
        let exaggeration = if iter <= cfg.exaggeration_iters { cfg.early_exaggeration } else { 1.0 };
        let momentum = if iter <= cfg.momentum_switch { cfg.initial_momentum } else { cfg.final_momentum };

        let mut z = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                num[j * n + i] = v;
                z += 2.0 * v;
            }
        }
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let nij = num[i * n + j];
                let q = (nij / z).max(Q_FLOOR);
                let w = (exaggeration * p[i * n + j] - q) * nij;
                gx += w * (y[2 * i] - y[2 * j]);
                gy += w * (y[2 * i + 1] - y[2 * j + 1]);
            }
            grad[2 * i] = 4.0 * gx;
            grad[2 * i + 1] = 4.0 * gy;
        }

        for k in 0..n * OUT_DIM {
            let same_sign = (grad[k] > 0.0) == (update[k] > 0.0);
            gains[k] = if same_sign { gains[k] * 0.8 } else { gains[k] + 0.2 };
            gains[k] = gains[k].max(MIN_GAIN);
            update[k] = momentum * update[k] - cfg.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        for d in 0..OUT_DIM {
            let mean = (0..n).map(|i| y[2 * i + d]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + d] -= mean);
        }

        if iter % 50 == 0 || iter == cfg.iters {
            kl_trace.push((iter, kl_divergence(&p, &y, n)));
        }
    }

    Ok(Embedding { coords: y, n, perplexity, kl_trace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneScore {
    pub score: f64,
    pub source_median: [f64; 2],
    pub target_median: [f64; 2],
    pub spread: f64,
    pub n_source: usize,
    pub n_target: usize,
    pub perplexity: f64,
    pub seed: u64,
    pub embedding: Embedding,
}

fn pool(utts: &[FeatureMatrix], cap: usize, seed: u64, side: u64) -> Result<FeatureMatrix, TsneError> {
    let all = FeatureMatrix::vstack(utts).map_err(|_| TsneError::DimensionMismatch {
        source_dim: utts[0].cols(),
        target_dim: utts.iter().map(FeatureMatrix::cols).find(|c| *c != utts[0].cols()).unwrap_or(0),
    })?;
    if all.rows() <= cap {
        return Ok(all);
    }
    let mut rng = stream(seed, &[STREAM_SUBSAMPLE, side]);
    let mut idx = rand::seq::index::sample(&mut rng, all.rows(), cap).into_vec();
    idx.sort_unstable();
    Ok(all.select_rows(&idx).expect("indices in range"))
}

fn median_point(e: &Embedding, range: std::ops::Range<usize>) -> [f64; 2] {
    let xs: Vec<f64> = range.clone().map(|i| e.coords[2 * i]).collect();
    let ys: Vec<f64> = range.map(|i| e.coords[2 * i + 1]).collect();
    [median(&xs).unwrap_or(0.0), median(&ys).unwrap_or(0.0)]
}

/// Distance between the coordinate-wise median points of the two domains in
/// a joint embedding.
pub fn tsne_score(
    source: &[FeatureMatrix],
    target: &[FeatureMatrix],
    cfg: &TsneConfig,
) -> Result<TsneScore, TsneError> {
    if source.is_empty() {
        return Err(TsneError::EmptyDomain("source"));
    }
    if target.is_empty() {
        return Err(TsneError::EmptyDomain("target"));
    }
    let src = pool(source, cfg.max_points_per_domain, cfg.seed, 0)?;
    let tgt = pool(target, cfg.max_points_per_domain, cfg.seed, 1)?;
    if src.cols() != tgt.cols() {
        return Err(TsneError::DimensionMismatch { source_dim: src.cols(), target_dim: tgt.cols() });
    }
    let joint = FeatureMatrix::vstack([&src, &tgt]).expect("dimensions checked");
    if joint.rows() > MAX_POINTS {
        return Err(TsneError::TooManyPoints { n: joint.rows(), max: MAX_POINTS });
    }
    let emb = tsne_embed(&joint, cfg)?;
    let (ns, nt) = (src.rows(), tgt.rows());
    let a = median_point(&emb, 0..ns);
    let b = median_point(&emb, ns..ns + nt);
    let score = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    Ok(TsneScore {
        score,
        source_median: a,
        target_median: b,
        spread: emb.spread(),
        n_source: ns,
        n_target: nt,
        perplexity: emb.perplexity,
        seed: cfg.seed,
        embedding: emb,
    })
}

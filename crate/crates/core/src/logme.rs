//! Log maximum evidence (LogME) of a Bayesian linear head.
//!
//! Targets are modelled as `y = F w + noise` with prior `w ~ N(0, 1/alpha I)`
//! and noise precision `beta`. The log marginal likelihood
//!
//! ```text
//! L(alpha, beta) = n/2 log beta + D/2 log alpha - n/2 log 2pi
//!                - beta/2 |y - F m|^2 - alpha/2 m'm
//!                - 1/2 sum_i log(alpha + beta s_i^2)
//! ```
//!
//! with `m = beta A^-1 F'y`, `A = alpha I + beta F'F` and `s_i` the singular
//! values of `F`, is maximised over `(alpha, beta)` by the evidence-framework
//! fixed point. One SVD of `F` serves every target.
//!
//! Multi-class labels are scored one-vs-rest and the per-class evidences are
//! averaged before dividing by the sample count.

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{frames_to_samples, AlignError, FrameAlignment};
use crate::matrix::FeatureMatrix;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 200;
/// Cap applied to `beta` when the targets are (numerically) linear in `F`.
pub const BETA_CAP: f64 = 1e12;
/// Cap applied to `alpha` when the posterior mean collapses to zero.
pub const ALPHA_CAP: f64 = 1e12;
const ZERO_RESIDUAL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LogmeError {
    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),
    #[error("degenerate shape {n}x{d}: need n >= 2 and D >= 1")]
    DegenerateShape { n: usize, d: usize },
    #[error("feature matrix is all zeros")]
    ZeroFeatures,
    #[error("target length {got} does not match {expected} samples")]
    LengthMismatch { expected: usize, got: usize },
    #[error("hyperparameters must be positive and finite (alpha={alpha}, beta={beta})")]
    BadHyperparameters { alpha: f64, beta: f64 },
    #[error("label {label} outside vocabulary of size {vocab_size}")]
    LabelOutOfRange { label: usize, vocab_size: usize },
    #[error("no class has both positive and negative samples")]
    NoEvaluableClass,
    #[error("alignment kept no non-blank frames")]
    EmptyAlignedSet,
    #[error(transparent)]
    Align(#[from] AlignError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceFlag {
    /// Residual vanished; `beta` was capped at [`BETA_CAP`].
    ZeroResidual,
    /// Posterior mean vanished; `alpha` was capped at [`ALPHA_CAP`].
    ZeroWeights,
    /// Stopped at the iteration limit.
    NoConvergence,
}

/// Result of the fixed-point search for one target vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceState {
    pub alpha: f64,
    pub beta: f64,
    /// Posterior mean weights, length `D`.
    pub m: Vec<f64>,
    /// Effective number of well-determined parameters.
    pub gamma: f64,
    pub log_evidence: f64,
    pub iterations: usize,
    pub flags: Vec<EvidenceFlag>,
}

impl EvidenceState {
    pub fn converged(&self) -> bool {
        !self.flags.contains(&EvidenceFlag::NoConvergence)
    }
}

/// SVD of a feature matrix, shared by all targets scored against it.
#[derive(Debug, Clone)]
pub struct EvidenceModel {
    n: usize,
    d: usize,
    sigma: Vec<f64>,
    sigma_sq: Vec<f64>,
    /// Left singular vectors, `n x r`.
    u: DMatrix<f64>,
    /// Right singular vectors transposed, `r x D`.
    v_t: DMatrix<f64>,
}

/// A target projected onto the left singular vectors.
struct Projection {
    z: Vec<f64>,
    /// `|y|^2 - |U'y|^2`, the part of `y` outside the column space of `F`.
    outside: f64,
}

struct Terms {
    mm: f64,
    residual: f64,
    gamma: f64,
    log_det: f64,
}

impl EvidenceModel {
    pub fn new(f: &FeatureMatrix) -> Result<Self, LogmeError> {
        let (n, d) = (f.rows(), f.cols());
        if n < 2 || d < 1 {
            return Err(LogmeError::DegenerateShape { n, d });
        }
        let svd = SVD::new(f.to_dmatrix(), true, true);
        let u = svd.u.expect("left singular vectors requested");
        let v_t = svd.v_t.expect("right singular vectors requested");
        let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
        let sigma_sq = sigma.iter().map(|s| s * s).collect();
        Ok(Self { n, d, sigma, sigma_sq, u, v_t })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.sigma
    }

    fn project(&self, y: &[f64]) -> Result<Projection, LogmeError> {
        if y.len() != self.n {
            return Err(LogmeError::LengthMismatch { expected: self.n, got: y.len() });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(LogmeError::NonFiniteInput("target"));
        }
        let yv = DVector::from_column_slice(y);
        let z: Vec<f64> = (self.u.transpose() * &yv).iter().copied().collect();
        let yy = yv.norm_squared();
        let inside: f64 = z.iter().map(|v| v * v).sum();
        Ok(Projection { z, outside: (yy - inside).max(0.0) })
    }

    fn terms(&self, p: &Projection, alpha: f64, beta: f64) -> Terms {
        let mut mm = 0.0;
        let mut residual = p.outside;
        let mut gamma = 0.0;
        let mut log_det = (self.d - self.sigma.len()) as f64 * alpha.ln();
        for ((&s, &s2), &z) in self.sigma.iter().zip(&self.sigma_sq).zip(&p.z) {
            let a = alpha + beta * s2;
            let mi = beta * s * z / a;
            let ri = z * alpha / a;
            mm += mi * mi;
            residual += ri * ri;
            gamma += beta * s2 / a;
            log_det += a.ln();
        }
        Terms { mm, residual, gamma, log_det }
    }

    fn log_evidence(&self, t: &Terms, alpha: f64, beta: f64) -> f64 {
        let n = self.n as f64;
        let d = self.d as f64;
        0.5 * n * beta.ln() + 0.5 * d * alpha.ln()
            - 0.5 * n * (2.0 * PI).ln()
            - 0.5 * beta * t.residual
            - 0.5 * alpha * t.mm
            - 0.5 * t.log_det
    }

    /// `log p(y | F, alpha, beta)`.
    pub fn evidence(&self, y: &[f64], alpha: f64, beta: f64) -> Result<f64, LogmeError> {
        check_hyper(alpha, beta)?;
        let p = self.project(y)?;
        Ok(self.log_evidence(&self.terms(&p, alpha, beta), alpha, beta))
    }

    fn posterior_mean(&self, p: &Projection, alpha: f64, beta: f64) -> Vec<f64> {
        let coeffs: Vec<f64> = self
            .sigma
            .iter()
            .zip(&self.sigma_sq)
            .zip(&p.z)
            .map(|((&s, &s2), &z)| beta * s * z / (alpha + beta * s2))
            .collect();
        let c = DVector::from_vec(coeffs);
        (self.v_t.transpose() * c).iter().copied().collect()
    }

    /// Fixed-point maximisation of the evidence from `alpha = beta = 1`.
    pub fn maximize(&self, y: &[f64]) -> Result<EvidenceState, LogmeError> {
        self.maximize_with(y, DEFAULT_TOL, DEFAULT_MAX_ITER)
    }

    pub fn maximize_with(&self, y: &[f64], tol: f64, max_iter: usize) -> Result<EvidenceState, LogmeError> {
        let p = self.project(y)?;
        let n = self.n as f64;
        let (mut alpha, mut beta) = (1.0, 1.0);
        let mut t = self.terms(&p, alpha, beta);
        let mut log_ev = self.log_evidence(&t, alpha, beta);
        let mut flags = Vec::new();
        let mut iterations = 0;
        let mut converged = false;

        while iterations < max_iter {
            iterations += 1;
            let mut capped = false;

            let new_alpha = if t.mm > 0.0 { t.gamma / t.mm } else { f64::INFINITY };
            if !(new_alpha <= ALPHA_CAP) {
                alpha = ALPHA_CAP;
                push_flag(&mut flags, EvidenceFlag::ZeroWeights);
                capped = true;
            } else {
                alpha = new_alpha.max(f64::MIN_POSITIVE);
            }

            let new_beta = if t.residual >= ZERO_RESIDUAL { (n - t.gamma) / t.residual } else { f64::INFINITY };
            if !(new_beta <= BETA_CAP) {
                beta = BETA_CAP;
                push_flag(&mut flags, EvidenceFlag::ZeroResidual);
                capped = true;
            } else {
                beta = new_beta.max(f64::MIN_POSITIVE);
            }

            t = self.terms(&p, alpha, beta);
            let next = self.log_evidence(&t, alpha, beta);
            let delta = (next - log_ev).abs();
            log_ev = next;
            if capped || delta < tol {
                converged = true;
                break;
            }
        }
        if !converged {
            flags.push(EvidenceFlag::NoConvergence);
        }

        Ok(EvidenceState {
            alpha,
            beta,
            m: self.posterior_mean(&p, alpha, beta),
            gamma: t.gamma,
            log_evidence: log_ev,
            iterations,
            flags,
        })
    }
}

fn push_flag(flags: &mut Vec<EvidenceFlag>, f: EvidenceFlag) {
    if !flags.contains(&f) {
        flags.push(f);
    }
}

fn check_hyper(alpha: f64, beta: f64) -> Result<(), LogmeError> {
    if alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite() {
        Ok(())
    } else {
        Err(LogmeError::BadHyperparameters { alpha, beta })
    }
}

/// `log p(y | F, alpha, beta)` for a single target.
pub fn evidence(f: &FeatureMatrix, y: &[f64], alpha: f64, beta: f64) -> Result<f64, LogmeError> {
    check_hyper(alpha, beta)?;
    EvidenceModel::new(f)?.evidence(y, alpha, beta)
}

pub fn maximize_evidence(f: &FeatureMatrix, y: &[f64]) -> Result<EvidenceState, LogmeError> {
    if f.as_slice().iter().all(|v| *v == 0.0) {
        return Err(LogmeError::ZeroFeatures);
    }
    EvidenceModel::new(f)?.maximize(y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEvidence {
    pub class: usize,
    pub log_evidence: f64,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<EvidenceFlag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    Absent,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedClass {
    pub class: usize,
    pub reason: SkipReason,
}

/// One-vs-rest LogME over a labelled sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMEScore {
    /// Mean per-class log evidence divided by `n_samples`.
    pub score: f64,
    pub per_class: Vec<ClassEvidence>,
    pub skipped: Vec<SkippedClass>,
    pub n_samples: usize,
    pub n_classes: usize,
}

impl LogMEScore {
    /// Union of per-class flags, in first-seen order.
    pub fn flags(&self) -> Vec<EvidenceFlag> {
        let mut out = Vec::new();
        for c in &self.per_class {
            for f in &c.flags {
                push_flag(&mut out, *f);
            }
        }
        out
    }
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Scores `F` against integer labels in `[0, vocab_size)`, one class at a time.
///
/// Samples are put in a canonical order (by feature row, then label) before
/// the decomposition, so the score does not depend on input row order.
pub fn logme_classification(f: &FeatureMatrix, labels: &[usize], vocab_size: usize) -> Result<LogMEScore, LogmeError> {
    let n = f.rows();
    if labels.len() != n {
        return Err(LogmeError::LengthMismatch { expected: n, got: labels.len() });
    }
    if n < 2 {
        return Err(LogmeError::DegenerateShape { n, d: f.cols() });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= vocab_size) {
        return Err(LogmeError::LabelOutOfRange { label, vocab_size });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| cmp_rows(f.row(i), f.row(j)).then(labels[i].cmp(&labels[j])));
    let f = f.select_rows(&order).expect("row selection preserves shape");
    let labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();

    if f.as_slice().iter().all(|v| *v == 0.0) {
        return Err(LogmeError::ZeroFeatures);
    }

    let mut counts = vec![0usize; vocab_size];
    for &l in &labels {
        counts[l] += 1;
    }
    let mut skipped = Vec::new();
    let mut evaluable = Vec::new();
    for (class, &c) in counts.iter().enumerate() {
        match c {
            0 => skipped.push(SkippedClass { class, reason: SkipReason::Absent }),
            c if c == n => skipped.push(SkippedClass { class, reason: SkipReason::Constant }),
            _ => evaluable.push(class),
        }
    }
    if evaluable.is_empty() {
        return Err(LogmeError::NoEvaluableClass);
    }

    let model = EvidenceModel::new(&f)?;
    let mut per_class = Vec::with_capacity(evaluable.len());
    let mut y = vec![0.0; n];
    for class in evaluable {
        for (yi, &l) in y.iter_mut().zip(&labels) {
            *yi = if l == class { 1.0 } else { 0.0 };
        }
        let st = model.maximize(&y)?;
        per_class.push(ClassEvidence {
            class,
            log_evidence: st.log_evidence,
            alpha: st.alpha,
            beta: st.beta,
            iterations: st.iterations,
            flags: st.flags,
        });
    }
    let mean = per_class.iter().map(|c| c.log_evidence).sum::<f64>() / per_class.len() as f64;
    Ok(LogMEScore { score: mean / n as f64, n_classes: per_class.len(), per_class, skipped, n_samples: n })
}

/// LogME over the non-blank frames selected by forced alignment.
pub fn logme_ctc(
    features: &[FeatureMatrix],
    alignments: &[FrameAlignment],
    vocab_size: usize,
) -> Result<LogMEScore, LogmeError> {
    let samples = frames_to_samples(features, alignments, vocab_size)?;
    let f = samples.to_matrix().ok_or(LogmeError::EmptyAlignedSet)?;
    logme_classification(&f, &samples.labels, vocab_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_closed_form() {
        let f = FeatureMatrix::new(2, 1, vec![1.0, 1.0]).unwrap();
        let got = evidence(&f, &[0.0, 0.0], 1.0, 1.0).unwrap();
        let expected = -(2.0 * PI).ln() - 0.5 * 3f64.ln();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn zero_target() {
        let f =
            FeatureMatrix::from_rows(&[[1.0, 2.0, 0.5], [0.0, -1.0, 3.0], [2.0, 2.0, 2.0], [1.0, 0.0, -1.0]]).unwrap();
        let (alpha, beta) = (0.7, 2.5);
        let model = EvidenceModel::new(&f).unwrap();
        let (n, d) = (4.0, 3.0);
        let log_det: f64 = model.singular_values().iter().map(|s| (alpha + beta * s * s).ln()).sum();
        let expected = 0.5 * n * f64::ln(beta) + 0.5 * d * f64::ln(alpha) - 0.5 * n * (2.0 * PI).ln() - 0.5 * log_det;
        let got = model.evidence(&[0.0; 4], alpha, beta).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn wide_matrix_counts_null_directions() {
        // D > n: D - rank singular values are zero and contribute log(alpha)
        let f = FeatureMatrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let alpha: f64 = 2.0;
        let got = evidence(&f, &[0.0, 0.0], alpha, 1.0).unwrap();
        let expected = 1.5 * alpha.ln() - (2.0 * PI).ln() - 0.5 * (2.0 * (alpha + 1.0).ln() + alpha.ln());
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn input_validation() {
        let f = FeatureMatrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(matches!(evidence(&f, &[1.0], 1.0, 1.0), Err(LogmeError::DegenerateShape { .. })));
        let f = FeatureMatrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        assert!(matches!(evidence(&f, &[1.0, f64::NAN], 1.0, 1.0), Err(LogmeError::NonFiniteInput(_))));
        assert!(matches!(evidence(&f, &[1.0, 0.0], 0.0, 1.0), Err(LogmeError::BadHyperparameters { .. })));
        assert!(matches!(evidence(&f, &[1.0], 1.0, 1.0), Err(LogmeError::LengthMismatch { .. })));
        let z = FeatureMatrix::new(2, 1, vec![0.0, 0.0]).unwrap();
        assert_eq!(maximize_evidence(&z, &[1.0, 0.0]).unwrap_err(), LogmeError::ZeroFeatures);
    }

    #[test]
    fn exact_fit_caps_beta() {
        let f = FeatureMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, -1.0]]).unwrap();
        let y: Vec<f64> = f.iter_rows().map(|r| 0.5 * r[0] - 2.0 * r[1]).collect();
        let st = maximize_evidence(&f, &y).unwrap();
        assert!(st.flags.contains(&EvidenceFlag::ZeroResidual));
        assert_eq!(st.beta, BETA_CAP);
        assert!(st.log_evidence.is_finite());
    }

    #[test]
    fn single_class_is_not_evaluable() {
        let f = FeatureMatrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        assert_eq!(logme_classification(&f, &[1, 1, 1], 3), Err(LogmeError::NoEvaluableClass));
    }

    #[test]
    fn skipped_classes_are_recorded() {
        let f = FeatureMatrix::from_rows(&[[1.0, 0.1], [2.0, 0.3], [3.0, -0.2], [0.5, 1.0]]).unwrap();
        let s = logme_classification(&f, &[0, 0, 2, 2], 3).unwrap();
        assert_eq!(s.n_classes, 2);
        assert_eq!(s.skipped, vec![SkippedClass { class: 1, reason: SkipReason::Absent }]);
        let mean = s.per_class.iter().map(|c| c.log_evidence).sum::<f64>() / 2.0;
        assert!((s.score - mean / 4.0).abs() < 1e-12);
    }

    #[test]
    fn all_blank_alignment_is_empty() {
        let f = FeatureMatrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let a = FrameAlignment { assigned: vec![3, 3], path_log_prob: 0.0, state_path: vec![0, 0] };
        assert_eq!(logme_ctc(&[f], &[a], 3), Err(LogmeError::EmptyAlignedSet));
    }
}

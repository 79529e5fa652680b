//! Embedded fixture suite run by the `selftest` command.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;

use crate::align::{brute_force_align, ctc_total_log_prob, enumerate_paths, viterbi_align};
use crate::ingest::PosteriorGrid;
use crate::logme::evidence;
use crate::matrix::FeatureMatrix;
use crate::rankeval::spearman;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq)]
pub struct SpearmanFixture {
    pub name: &'static str,
    pub reference: Vec<f64>,
    pub predicted: Vec<f64>,
    pub rho: f64,
    pub rho_tol: f64,
    pub p_value: f64,
    /// Accepted ratio between computed and expected p-value, either way.
    pub p_factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceFixture {
    /// Single feature column.
    pub feature: Vec<f64>,
    pub target: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentFixture {
    pub seed: u64,
    pub instances: usize,
    pub max_frames: usize,
    pub max_labels: usize,
    pub max_vocab: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixtures {
    pub spearman: Vec<SpearmanFixture>,
    pub evidence: EvidenceFixture,
    pub alignment: AlignmentFixture,
}

const T1_FT: [f64; 17] = [17., 15., 16., 14., 11., 13., 12., 10., 7., 8., 4., 6., 9., 3., 5., 2., 1.];
const T1_TSNE: [f64; 17] = [17., 16., 15., 13., 14., 12., 5., 3., 1., 10., 4., 8., 7., 9., 11., 6., 2.];
const T1_LOGME: [f64; 17] = [17., 10., 15., 13., 16., 12., 14., 6., 7., 9., 5., 11., 8., 4., 3., 2., 1.];
const T1_SWD: [f64; 17] = [17., 11., 10., 14., 13., 16., 15., 8., 9., 4., 6., 12., 7., 5., 2., 3., 1.];
const T2_FT: [f64; 12] = [12., 9., 8., 7., 6., 5., 4., 3., 2., 1., 10., 11.];
const T2_LOGME: [f64; 12] = [9., 10., 8., 7., 6., 5., 4., 2., 3., 1., 12., 11.];

impl Default for Fixtures {
    fn default() -> Self {
        let fx = |name, reference: &[f64], predicted: &[f64], rho, p_value| SpearmanFixture {
            name,
            reference: reference.to_vec(),
            predicted: predicted.to_vec(),
            rho,
            rho_tol: 0.005,
            p_value,
            p_factor: 2.0,
        };
        Self {
            spearman: vec![
                fx("conformer_logme", &T1_FT, &T1_LOGME, 0.8701, 6e-6),
                fx("conformer_swd", &T1_FT, &T1_SWD, 0.8088, 7e-5),
                fx("conformer_tsne", &T1_FT, &T1_TSNE, 0.696, 1e-3),
                fx("ssl_layers_logme", &T2_FT, &T2_LOGME, 0.944, 3e-6),
            ],
            evidence: EvidenceFixture {
                feature: vec![1.0, 1.0],
                target: vec![0.0, 0.0],
                alpha: 1.0,
                beta: 1.0,
                tol: 1e-10,
            },
            alignment: AlignmentFixture {
                seed: 20_240_601,
                instances: 50,
                max_frames: 8,
                max_labels: 3,
                max_vocab: 4,
                tol: 1e-9,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub lines: Vec<String>,
    pub passed: usize,
    pub failed: usize,
}

impl SelftestReport {
    pub fn ok(&self) -> bool {
        self.failed == 0
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        for l in &self.lines {
            let _ = writeln!(s, "{l}");
        }
        let _ = writeln!(s, "{} passed, {} failed", self.passed, self.failed);
        s
    }

    fn record(&mut self, name: &str, result: Result<String, String>) {
        let line = match result {
            Ok(detail) => {
                self.passed += 1;
                format!("PASS {name}: {detail}")
            }
            Err(detail) => {
                self.failed += 1;
                format!("FAIL {name}: {detail}")
            }
        };
        self.lines.push(line);
    }
}

pub fn run_selftest() -> SelftestReport {
    run_selftest_with(&Fixtures::default())
}

pub fn run_selftest_with(fixtures: &Fixtures) -> SelftestReport {
    let mut report = SelftestReport { lines: Vec::new(), passed: 0, failed: 0 };
    for f in &fixtures.spearman {
        report.record(&format!("spearman/{}", f.name), check_spearman(f));
    }
    report.record("evidence/one_dimensional", check_evidence(&fixtures.evidence));
    report.record("align/brute_force", check_alignment(&fixtures.alignment));
    report
}

fn check_spearman(f: &SpearmanFixture) -> Result<String, String> {
    let r = spearman(&f.reference, &f.predicted).map_err(|e| e.to_string())?;
    let detail = format!("rho={:.4} p={:.2e}", r.rho, r.p_value);
    if (r.rho - f.rho).abs() > f.rho_tol {
        return Err(format!("{detail}, expected rho {} +/- {}", f.rho, f.rho_tol));
    }
    let ratio = r.p_value / f.p_value;
    if !(ratio <= f.p_factor && ratio >= 1.0 / f.p_factor) {
        return Err(format!("{detail}, expected p within x{} of {:e}", f.p_factor, f.p_value));
    }
    Ok(detail)
}

/// Marginal likelihood of `y ~ N(0, I/beta + f f^T/alpha)` via the
/// rank-one determinant and Sherman-Morrison inverse.
fn gaussian_marginal(f: &[f64], y: &[f64], alpha: f64, beta: f64) -> f64 {
    let n = f.len() as f64;
    let ff: f64 = f.iter().map(|v| v * v).sum();
    let fy: f64 = f.iter().zip(y).map(|(a, b)| a * b).sum();
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let log_det = -n * beta.ln() + (1.0 + beta * ff / alpha).ln();
    let quad = beta * yy - beta * beta * fy * fy / (alpha + beta * ff);
    -0.5 * n * (2.0 * PI).ln() - 0.5 * log_det - 0.5 * quad
}

fn check_evidence(f: &EvidenceFixture) -> Result<String, String> {
    let m = FeatureMatrix::new(f.feature.len(), 1, f.feature.clone()).map_err(|e| e.to_string())?;
    let got = evidence(&m, &f.target, f.alpha, f.beta).map_err(|e| e.to_string())?;
    let want = gaussian_marginal(&f.feature, &f.target, f.alpha, f.beta);
    let detail = format!("L={got:.12} analytic={want:.12}");
    if (got - want).abs() <= f.tol {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Random posterior grid with per-frame softmax of standard-normal logits.
pub fn random_grid<R: Rng>(rng: &mut R, frames: usize, vocab_size: usize) -> PosteriorGrid {
    let w = vocab_size + 1;
    let mut data = Vec::with_capacity(frames * w);
    for _ in 0..frames {
        let logits: Vec<f64> = (0..w).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
        data.extend(logits.iter().map(|l| l - lse));
    }
    PosteriorGrid::new(frames, vocab_size, data).expect("softmax rows are normalised")
}

fn check_alignment(f: &AlignmentFixture) -> Result<String, String> {
    let mut rng = stream(f.seed, &[]);
    let mut checked = 0;
    let mut attempts = 0;
    while checked < f.instances {
        attempts += 1;
        if attempts > 100 * f.instances.max(1) {
            return Err(format!("only {checked} feasible instances generated"));
        }
        let vocab = rng.random_range(1..=f.max_vocab);
        let len = rng.random_range(1..=f.max_labels);
        let frames = rng.random_range(1..=f.max_frames);
        let labels: Vec<usize> = (0..len).map(|_| rng.random_range(0..vocab)).collect();
        let grid = random_grid(&mut rng, frames, vocab);
        let vit = match viterbi_align(&grid, &labels) {
            Ok(a) => a,
            Err(_) => continue,
        };
        let brute = brute_force_align(&grid, &labels).map_err(|e| e.to_string())?;
        if vit.assigned != brute.assigned || (vit.path_log_prob - brute.path_log_prob).abs() > f.tol {
            return Err(format!("instance {checked}: viterbi {:?} vs brute force {:?}", vit.assigned, brute.assigned));
        }
        let total = ctc_total_log_prob(&grid, &labels).map_err(|e| e.to_string())?;
        let paths = enumerate_paths(&grid, &labels).map_err(|e| e.to_string())?;
        let mx = paths.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + paths.iter().map(|p| (p.1 - mx).exp()).sum::<f64>().ln();
        if (total - lse).abs() > f.tol {
            return Err(format!("instance {checked}: forward {total} vs enumerated {lse}"));
        }
        checked += 1;
    }
    Ok(format!("{checked} instances (seed {})", f.seed))
}

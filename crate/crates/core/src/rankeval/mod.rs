//! Rankings and Spearman rank correlation against fine-tuning ground truth.

mod beta;

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::MetricDirection;
use crate::score::{Method, TransferScore};

pub use beta::incomplete_beta;

#[derive(Debug, Error, PartialEq)]
pub enum RankError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("incomplete beta outside its domain: x={x}, a={a}, b={b}")]
    DomainError { x: f64, a: f64, b: f64 },
    #[error("exact permutation test limited to n <= {max}, got {n}")]
    PermutationTooLarge { n: usize, max: usize },
    #[error("method '{method}' covers a different candidate set than the ground truth: {detail}")]
    CandidateSetMismatch { method: String, detail: String },
    #[error("method '{method}' mixes seeds {seeds:?}")]
    MixedSeeds { method: String, seeds: Vec<u64> },
    #[error("duplicate candidate '{0}'")]
    DuplicateCandidate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankSource {
    FromMetricLowerBetter,
    FromMetricHigherBetter,
    FromScore,
}

/// Ranks with 1 = best; ties share the average of the positions they span.
#[derive(Debug, Clone, PartialEq)]
pub struct RankVector {
    pub ranks: Vec<f64>,
    pub source: RankSource,
}

/// Ranks values so the best gets 1: the smallest when `LowerBetter`, the
/// largest when `HigherBetter`.
pub fn to_ranks(values: &[f64], direction: MetricDirection) -> Result<RankVector, RankError> {
    let ranks = average_ranks(values, direction)?;
    let source = match direction {
        MetricDirection::LowerBetter => RankSource::FromMetricLowerBetter,
        MetricDirection::HigherBetter => RankSource::FromMetricHigherBetter,
    };
    Ok(RankVector { ranks, source })
}

fn average_ranks(values: &[f64], direction: MetricDirection) -> Result<Vec<f64>, RankError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(RankError::NonFinite);
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| {
        let o = values[i].total_cmp(&values[j]);
        match direction {
            MetricDirection::LowerBetter => o,
            MetricDirection::HigherBetter => o.reverse(),
        }
    });
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their mean
        let avg = (start + 1 + end) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    Ok(ranks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
    pub method: String,
}

fn has_ties(r: &[f64]) -> bool {
    let mut s = r.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).any(|w| w[0] == w[1])
}

fn spearman_rho(ra: &[f64], rb: &[f64]) -> f64 {
    let n = ra.len() as f64;
    if !has_ties(ra) && !has_ties(rb) {
        // n(n^2-1) - 6 sum d^2 is an exact integer, so reversing one ranking
        // flips the sign of rho exactly.
        let d2: f64 = ra.iter().zip(rb).map(|(a, b)| (a - b) * (a - b)).sum();
        let den = n * (n * n - 1.0);
        return (den - 6.0 * d2) / den;
    }
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in ra.iter().zip(rb) {
        let (da, db) = (a - ma, b - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Two-sided p-value of `rho` from the t distribution with `n - 2` degrees of
/// freedom.
pub fn t_p_value(rho: f64, n: usize) -> Result<f64, RankError> {
    if rho.abs() >= 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t2 = rho * rho * df / (1.0 - rho * rho);
    incomplete_beta(df / (df + t2), df / 2.0, 0.5)
}

/// Spearman's rank correlation of two samples (raw values or ranks) with a
/// t-approximation p-value.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<CorrelationResult, RankError> {
    if a.len() != b.len() {
        return Err(RankError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 3 {
        return Err(RankError::TooFewPoints(n));
    }
    let ra = average_ranks(a, MetricDirection::LowerBetter)?;
    let rb = average_ranks(b, MetricDirection::LowerBetter)?;
    let rho = spearman_rho(&ra, &rb);
    Ok(CorrelationResult { rho, p_value: t_p_value(rho, n)?, n, method: "spearman_t".into() })
}

pub const PERMUTATION_MAX_N: usize = 8;

/// Exact two-sided permutation p-value: the share of all `n!` reorderings of
/// `b` whose `|rho|` is at least the observed one.
pub fn permutation_p_value(a: &[f64], b: &[f64]) -> Result<f64, RankError> {
    if a.len() != b.len() {
        return Err(RankError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 3 {
        return Err(RankError::TooFewPoints(n));
    }
    if n > PERMUTATION_MAX_N {
        return Err(RankError::PermutationTooLarge { n, max: PERMUTATION_MAX_N });
    }
    let ra = average_ranks(a, MetricDirection::LowerBetter)?;
    let mut rb = average_ranks(b, MetricDirection::LowerBetter)?;
    let observed = spearman_rho(&ra, &rb).abs();

    // Heap's algorithm over rb
    let (mut hits, mut total) = (0u64, 0u64);
    let mut count = |r: &[f64]| {
        total += 1;
        if spearman_rho(&ra, r).abs() >= observed - 1e-12 {
            hits += 1;
        }
    };
    let mut c = vec![0usize; n];
    count(&rb);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                rb.swap(0, i);
            } else {
                rb.swap(c[i], i);
            }
            count(&rb);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

/// Fine-tuning results keyed by candidate, in presentation order.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub values: Vec<(String, f64)>,
    pub direction: MetricDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodColumn {
    pub method: Method,
    pub seed: Option<u64>,
    /// Scores in ground-truth candidate order.
    pub scores: Vec<f64>,
    pub ranks: Vec<f64>,
    pub correlation: CorrelationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub candidates: Vec<String>,
    pub metric: Vec<f64>,
    pub direction: MetricDirection,
    pub rank_ft: Vec<f64>,
    pub methods: Vec<MethodColumn>,
}

/// Ranks every method column and correlates it with the ground-truth ranks.
///
/// Each column is oriented so rank 1 is the predicted best transfer: LogME
/// descending, SWD and tSNE (difficulty scores) ascending.
pub fn build_report(scores: &[TransferScore], truth: &GroundTruth) -> Result<RankingReport, RankError> {
    let mut truth_ids = BTreeSet::new();
    for (id, _) in &truth.values {
        if !truth_ids.insert(id.as_str()) {
            return Err(RankError::DuplicateCandidate(id.clone()));
        }
    }
    let metric: Vec<f64> = truth.values.iter().map(|(_, v)| *v).collect();
    let rank_ft = to_ranks(&metric, truth.direction)?.ranks;

    let mut order: Vec<Method> = Vec::new();
    let mut by_method: HashMap<Method, Vec<&TransferScore>> = HashMap::new();
    for s in scores {
        let m = s.method();
        if !order.contains(&m) {
            order.push(m);
        }
        by_method.entry(m).or_default().push(s);
    }

    let mut methods = Vec::with_capacity(order.len());
    for m in order {
        let records = &by_method[&m];
        let mut lookup: HashMap<&str, &TransferScore> = HashMap::new();
        for r in records {
            if lookup.insert(r.candidate_id.as_str(), r).is_some() {
                return Err(RankError::DuplicateCandidate(format!("{} ({m})", r.candidate_id)));
            }
        }
        let ids: BTreeSet<&str> = lookup.keys().copied().collect();
        if ids != truth_ids {
            let missing: Vec<_> = truth_ids.difference(&ids).collect();
            let extra: Vec<_> = ids.difference(&truth_ids).collect();
            return Err(RankError::CandidateSetMismatch {
                method: m.to_string(),
                detail: format!("missing {missing:?}, unexpected {extra:?}"),
            });
        }
        let seeds: BTreeSet<u64> = records.iter().map(|r| r.seed()).collect();
        if m.is_stochastic() && seeds.len() > 1 {
            return Err(RankError::MixedSeeds { method: m.to_string(), seeds: seeds.into_iter().collect() });
        }
        let col: Vec<f64> = truth.values.iter().map(|(id, _)| lookup[id.as_str()].score()).collect();
        let dir = if m.higher_is_better() { MetricDirection::HigherBetter } else { MetricDirection::LowerBetter };
        let ranks = average_ranks(&col, dir)?;
        let correlation = spearman(&rank_ft, &ranks)?;
        methods.push(MethodColumn {
            method: m,
            seed: (seeds.len() == 1).then(|| *seeds.iter().next().unwrap()),
            scores: col,
            ranks,
            correlation,
        });
    }

    Ok(RankingReport {
        candidates: truth.values.iter().map(|(id, _)| id.clone()).collect(),
        metric,
        direction: truth.direction,
        rank_ft,
        methods,
    })
}

fn fmt_rank(r: f64) -> String {
    if r.fract() == 0.0 {
        format!("{r:.0}")
    } else {
        format!("{r:.1}")
    }
}

impl RankingReport {
    /// Plain-text table: one row per candidate, then the correlation rows.
    pub fn to_table(&self) -> String {
        let arrow = match self.direction {
            MetricDirection::LowerBetter => "(lower better)",
            MetricDirection::HigherBetter => "(higher better)",
        };
        let mut header = vec!["Candidate".to_string(), format!("Metric {arrow}"), "Rank_FT".to_string()];
        header.extend(self.methods.iter().map(|m| format!("Rank_{}", m.method.label())));

        let mut rows: Vec<Vec<String>> = Vec::new();
        for (i, id) in self.candidates.iter().enumerate() {
            let mut row = vec![id.clone(), format!("{}", self.metric[i]), fmt_rank(self.rank_ft[i])];
            row.extend(self.methods.iter().map(|m| fmt_rank(m.ranks[i])));
            rows.push(row);
        }
        let mut rho = vec!["Spearman rho".to_string(), String::new(), String::new()];
        rho.extend(self.methods.iter().map(|m| format!("{:.4}", m.correlation.rho)));
        let mut p = vec!["p-value".to_string(), String::new(), String::new()];
        p.extend(self.methods.iter().map(|m| format!("{:.2e}", m.correlation.p_value)));

        let widths: Vec<usize> = (0..header.len())
            .map(|c| {
                std::iter::once(&header).chain(rows.iter()).chain([&rho, &p]).map(|r| r[c].len()).max().unwrap_or(0)
            })
            .collect();
        let line = |r: &[String]| -> String {
            r.iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1));
        let mut out = String::new();
        let _ = writeln!(out, "{}", line(&header));
        let _ = writeln!(out, "{rule}");
        for r in &rows {
            let _ = writeln!(out, "{}", line(r));
        }
        let _ = writeln!(out, "{rule}");
        let _ = writeln!(out, "{}", line(&rho));
        let _ = writeln!(out, "{}", line(&p));
        out
    }
}

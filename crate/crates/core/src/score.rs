//! Per-candidate score records as written by the `score` command.

use serde::{Deserialize, Serialize};

use crate::logme::{EvidenceFlag, LogMEScore};
use crate::swd::SwdScore;
use crate::tsne::TsneScore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Logme,
    Swd,
    Tsne,
}

impl Method {
    /// Whether larger scores predict better transfer.
    pub fn higher_is_better(self) -> bool {
        matches!(self, Method::Logme)
    }

    /// Whether the score depends on the RNG seed.
    pub fn is_stochastic(self) -> bool {
        !matches!(self, Method::Logme)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Logme => "logme",
            Method::Swd => "swd",
            Method::Tsne => "tsne",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Logme => "LogME",
            Method::Swd => "SWD",
            Method::Tsne => "tSNE",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logme" => Ok(Method::Logme),
            "swd" => Ok(Method::Swd),
            "tsne" => Ok(Method::Tsne),
            other => Err(format!("unknown method '{other}' (expected logme, swd or tsne)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ScoreDetails {
    Logme {
        score: f64,
        /// Log evidence of each evaluated class, parallel to `classes`.
        per_class: Vec<f64>,
        classes: Vec<usize>,
        flags: Vec<String>,
        n: usize,
        seed: u64,
        /// How frame labels were obtained: "viterbi", "uniform" or "utterance".
        alignment: String,
    },
    Swd {
        score: f64,
        t_eval: usize,
        m: usize,
        seed: u64,
        batch_size: usize,
        flags: Vec<String>,
    },
    Tsne {
        score: f64,
        seed: u64,
        perplexity: f64,
        spread: f64,
        flags: Vec<String>,
    },
}

/// A method-tagged score for one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferScore {
    pub candidate_id: String,
    #[serde(flatten)]
    pub details: ScoreDetails,
}

impl TransferScore {
    pub fn method(&self) -> Method {
        match self.details {
            ScoreDetails::Logme { .. } => Method::Logme,
            ScoreDetails::Swd { .. } => Method::Swd,
            ScoreDetails::Tsne { .. } => Method::Tsne,
        }
    }

    pub fn score(&self) -> f64 {
        match &self.details {
            ScoreDetails::Logme { score, .. } | ScoreDetails::Swd { score, .. } | ScoreDetails::Tsne { score, .. } => {
                *score
            }
        }
    }

    pub fn seed(&self) -> u64 {
        match &self.details {
            ScoreDetails::Logme { seed, .. } | ScoreDetails::Swd { seed, .. } | ScoreDetails::Tsne { seed, .. } => {
                *seed
            }
        }
    }

    pub fn from_logme(candidate_id: &str, s: &LogMEScore, seed: u64, alignment: &str) -> Self {
        let mut flags: Vec<String> = s.flags().iter().map(|f| flag_name(*f).to_string()).collect();
        for sk in &s.skipped {
            flags.push(format!("skipped_class_{}_{}", sk.class, serde_plain(&sk.reason)));
        }
        flags.push("per_class_mean".to_string());
        Self {
            candidate_id: candidate_id.to_string(),
            details: ScoreDetails::Logme {
                score: s.score,
                per_class: s.per_class.iter().map(|c| c.log_evidence).collect(),
                classes: s.per_class.iter().map(|c| c.class).collect(),
                flags,
                n: s.n_samples,
                seed,
                alignment: alignment.to_string(),
            },
        }
    }

    pub fn from_swd(candidate_id: &str, s: &SwdScore, batch_size: usize) -> Self {
        let mut flags = vec!["truncated_to_min_length".to_string()];
        if s.subsampled {
            flags.push(format!("subsampled_to_{}", s.batch));
        }
        Self {
            candidate_id: candidate_id.to_string(),
            details: ScoreDetails::Swd {
                score: s.score,
                t_eval: s.t_eval,
                m: s.n_projections,
                seed: s.seed,
                batch_size,
                flags,
            },
        }
    }

    pub fn from_tsne(candidate_id: &str, s: &TsneScore) -> Self {
        Self {
            candidate_id: candidate_id.to_string(),
            details: ScoreDetails::Tsne {
                score: s.score,
                seed: s.seed,
                perplexity: s.perplexity,
                spread: s.spread,
                flags: vec!["joint_embedding".to_string(), "coordinatewise_median".to_string()],
            },
        }
    }
}

fn flag_name(f: EvidenceFlag) -> &'static str {
    match f {
        EvidenceFlag::ZeroResidual => "zero_residual",
        EvidenceFlag::ZeroWeights => "zero_weights",
        EvidenceFlag::NoConvergence => "no_convergence",
    }
}

fn serde_plain<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

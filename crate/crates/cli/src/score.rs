use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xferscore::align::{uniform_alignment, viterbi_align, FrameAlignment};
use xferscore::ingest::{
    assemble_dataset, load_domain, load_manifest, write_npy, AssembleOptions, Dataset, IngestError, Manifest,
    Posteriors, TaskKind,
};
use xferscore::logme::{logme_classification, logme_ctc};
use xferscore::score::{Method, TransferScore};
use xferscore::swd::{swd_score, SwdConfig};
use xferscore::tsne::{tsne_score, TsneConfig};
use xferscore::FeatureMatrix;

use crate::output::emit;
use crate::ScoreArgs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub method: Method,
    pub seed: u64,
    pub config_hash: String,
    pub wall_time_s: f64,
    pub candidates: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub candidate_id: String,
    pub method: Method,
    pub seed: u64,
    pub error: ErrorBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Record {
    Score(TransferScore),
    Error(ErrorRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub run: RunHeader,
    pub records: Vec<Record>,
}

#[derive(Debug)]
struct Failure {
    kind: &'static str,
    message: String,
}

impl Failure {
    fn new(kind: &'static str, e: impl Display) -> Self {
        Self { kind, message: e.to_string() }
    }
}

macro_rules! failure_from {
    ($($t:ty => $kind:literal),* $(,)?) => {
        $(impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::new($kind, e)
            }
        })*
    };
}

failure_from! {
    IngestError => "ingest",
    xferscore::align::AlignError => "align",
    xferscore::logme::LogmeError => "logme",
    xferscore::swd::SwdError => "swd",
    xferscore::tsne::TsneError => "tsne",
}

fn config_hash(args: &ScoreArgs, manifest_bytes: &[u8]) -> String {
    let manifest_digest = Sha256::digest(manifest_bytes);
    let canonical = serde_json::json!({
        "method": args.method,
        "seed": args.seed,
        "projections": args.projections,
        "batch_size": args.batch_size,
        "perplexity": args.perplexity,
        "pool_mean": args.pool_mean,
        "max_points": args.max_points,
        "manifest_sha256": hex(&manifest_digest),
    });
    hex(&Sha256::digest(canonical.to_string().as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run(args: &ScoreArgs) -> anyhow::Result<bool> {
    let started = Instant::now();
    let bytes = fs::read(&args.manifest).with_context(|| format!("reading {}", args.manifest.display()))?;
    let manifest = load_manifest(&args.manifest)?;
    if let Some(dir) = &args.dump_embedding {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build()?;
    let records: Vec<Record> = pool.install(|| {
        manifest
            .candidates
            .par_iter()
            .map(|c| match score_candidate(&manifest, &c.id, args) {
                Ok(s) => Record::Score(s),
                Err(f) => Record::Error(ErrorRecord {
                    candidate_id: c.id.clone(),
                    method: args.method,
                    seed: args.seed,
                    error: ErrorBody { kind: f.kind.to_string(), message: f.message },
                }),
            })
            .collect()
    });

    let failed = records.iter().filter(|r| matches!(r, Record::Error(_))).count();
    let file = ScoreFile {
        run: RunHeader {
            method: args.method,
            seed: args.seed,
            config_hash: config_hash(args, &bytes),
            wall_time_s: started.elapsed().as_secs_f64(),
            candidates: records.len(),
            failed,
        },
        records,
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    emit(args.output.as_deref(), &text)?;
    for r in &file.records {
        if let Record::Error(e) = r {
            eprintln!("{}: {} error: {}", e.candidate_id, e.error.kind, e.error.message);
        }
    }
    Ok(failed == 0)
}

fn score_candidate(manifest: &Manifest, id: &str, args: &ScoreArgs) -> Result<TransferScore, Failure> {
    match args.method {
        Method::Logme => score_logme(manifest, id, args),
        Method::Swd | Method::Tsne => score_domain_gap(manifest, id, args),
    }
}

fn score_logme(manifest: &Manifest, id: &str, args: &ScoreArgs) -> Result<TransferScore, Failure> {
    if manifest.task_kind == TaskKind::Sequence && args.pool_mean {
        return Err(Failure::new("config", "--pool-mean discards the frame axis that sequence-task LogME aligns"));
    }
    let ds = assemble_dataset(manifest, id, AssembleOptions { pool_mean: args.pool_mean })?;
    let v = ds.vocab_size();
    match ds.task_kind {
        TaskKind::Classification => {
            let (f, labels) = utterance_samples(&ds)?;
            let s = logme_classification(&f, &labels, v)?;
            Ok(TransferScore::from_logme(id, &s, args.seed, "utterance"))
        }
        TaskKind::Sequence => {
            let posteriors = ds.posteriors.as_ref().ok_or_else(|| IngestError::MissingPosteriors(id.to_string()))?;
            let mut alignments: Vec<FrameAlignment> = Vec::with_capacity(ds.features.len());
            for (i, (f, u)) in ds.features.iter().zip(&ds.labels.utterances).enumerate() {
                let a = match posteriors {
                    Posteriors::Grids(g) => viterbi_align(&g[i], &u.labels),
                    Posteriors::Uniform => uniform_alignment(f.rows(), &u.labels, v),
                }
                .map_err(|e| Failure::new("align", format!("utterance '{}': {e}", u.utt_id)))?;
                alignments.push(a);
            }
            let s = logme_ctc(&ds.features, &alignments, v)?;
            let how = match posteriors {
                Posteriors::Grids(_) => "viterbi",
                Posteriors::Uniform => "uniform",
            };
            Ok(TransferScore::from_logme(id, &s, args.seed, how))
        }
    }
}

// Every frame of an utterance carries the utterance's class.
fn utterance_samples(ds: &Dataset) -> Result<(FeatureMatrix, Vec<usize>), Failure> {
    let f = FeatureMatrix::vstack(&ds.features).map_err(|e| Failure::new("ingest", e))?;
    let labels = ds
        .features
        .iter()
        .zip(&ds.labels.utterances)
        .flat_map(|(m, u)| std::iter::repeat_n(u.labels[0], m.rows()))
        .collect();
    Ok((f, labels))
}

fn score_domain_gap(manifest: &Manifest, id: &str, args: &ScoreArgs) -> Result<TransferScore, Failure> {
    let cand = manifest.candidate(id)?;
    let Some(source_path) = manifest.source_for(cand) else {
        return Err(Failure::new(
            "config",
            format!(
                "method {} compares a source domain against the target domain and cannot be used on \
                 self-supervised (SSL) models, which have no distinct source domain; add source_features \
                 to the manifest or use --method logme",
                args.method
            ),
        ));
    };
    let ds = assemble_dataset(manifest, id, AssembleOptions { pool_mean: args.pool_mean })?;
    let mut source = load_domain(source_path)?;
    if args.pool_mean {
        source = source.iter().map(FeatureMatrix::mean_pool).collect();
    }
    match args.method {
        Method::Swd => {
            let cfg = SwdConfig { n_projections: args.projections, batch_size: args.batch_size, seed: args.seed };
            let s = swd_score(&source, &ds.features, &cfg)?;
            Ok(TransferScore::from_swd(id, &s, args.batch_size))
        }
        _ => {
            let cfg = TsneConfig {
                perplexity: args.perplexity,
                seed: args.seed,
                max_points_per_domain: args.max_points,
                ..TsneConfig::default()
            };
            let s = tsne_score(&source, &ds.features, &cfg)?;
            if let Some(dir) = &args.dump_embedding {
                dump_embedding(dir, id, &s.embedding.coords, s.embedding.n)?;
            }
            Ok(TransferScore::from_tsne(id, &s))
        }
    }
}

fn dump_embedding(dir: &Path, id: &str, coords: &[f64], n: usize) -> Result<(), Failure> {
    write_npy(&dir.join(format!("{id}.npy")), &[n, 2], coords).map_err(|e| Failure::new("io", e))
}

/// Reads a score file written by [`run`].
pub fn read_score_file(path: &Path) -> anyhow::Result<ScoreFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

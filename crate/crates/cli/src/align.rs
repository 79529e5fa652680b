use anyhow::{bail, Context};
use serde::Serialize;
use xferscore::align::{uniform_alignment, viterbi_align};
use xferscore::ingest::{assemble_dataset, load_manifest, AssembleOptions, IngestError, Posteriors, TaskKind};

use crate::output::emit;
use crate::AlignArgs;

#[derive(Serialize)]
struct AlignedUtterance<'a> {
    utt_id: &'a str,
    assigned: &'a [usize],
    log_prob: f64,
}

pub fn run(args: &AlignArgs) -> anyhow::Result<bool> {
    let manifest = load_manifest(&args.manifest)?;
    if manifest.task_kind != TaskKind::Sequence {
        bail!("alignment needs a sequence task; {} is a classification manifest", args.manifest.display());
    }
    let ds = assemble_dataset(&manifest, &args.candidate, AssembleOptions::default())?;
    let posteriors = ds.posteriors.as_ref().ok_or_else(|| IngestError::MissingPosteriors(args.candidate.clone()))?;
    let v = ds.vocab_size();
    let mut text = String::new();
    for (i, (f, u)) in ds.features.iter().zip(&ds.labels.utterances).enumerate() {
        let a = match posteriors {
            Posteriors::Grids(g) => viterbi_align(&g[i], &u.labels),
            Posteriors::Uniform => uniform_alignment(f.rows(), &u.labels, v),
        }
        .with_context(|| format!("utterance '{}'", u.utt_id))?;
        let line = AlignedUtterance { utt_id: &u.utt_id, assigned: &a.assigned, log_prob: a.path_log_prob };
        text.push_str(&serde_json::to_string(&line)?);
        text.push('\n');
    }
    emit(args.output.as_deref(), &text)?;
    Ok(true)
}

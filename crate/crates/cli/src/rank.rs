use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use serde::Deserialize;
use xferscore::ingest::{load_manifest, MetricDirection};
use xferscore::rankeval::{build_report, GroundTruth};

use crate::output::emit;
use crate::score::{read_score_file, Record};
use crate::RankArgs;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundTruthFile {
    metric_direction: MetricDirection,
    candidates: Vec<GroundTruthEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundTruthEntry {
    candidate_id: String,
    metric: f64,
}

fn truth_from_file(path: &Path) -> anyhow::Result<GroundTruth> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let f: GroundTruthFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(GroundTruth {
        values: f.candidates.into_iter().map(|c| (c.candidate_id, c.metric)).collect(),
        direction: f.metric_direction,
    })
}

fn truth_from_manifest(path: &Path) -> anyhow::Result<GroundTruth> {
    let m = load_manifest(path)?;
    let mut values = Vec::with_capacity(m.candidates.len());
    let mut direction = None;
    for c in &m.candidates {
        let Some(metric) = c.ground_truth_metric else {
            bail!("candidate '{}' has no ground_truth_metric", c.id);
        };
        let d = c.metric_direction.unwrap_or(MetricDirection::LowerBetter);
        if direction.is_some_and(|prev| prev != d) {
            bail!("candidates disagree on metric_direction");
        }
        direction = Some(d);
        values.push((c.id.clone(), metric));
    }
    Ok(GroundTruth { values, direction: direction.unwrap_or(MetricDirection::LowerBetter) })
}

pub fn run(args: &RankArgs) -> anyhow::Result<bool> {
    let truth = match (&args.ground_truth, &args.manifest) {
        (Some(p), _) => truth_from_file(p)?,
        (None, Some(m)) => truth_from_manifest(m)?,
        (None, None) => bail!("either --ground-truth or --manifest is required"),
    };
    let mut scores = Vec::new();
    for path in &args.scores {
        for r in read_score_file(path)?.records {
            match r {
                Record::Score(s) => scores.push(s),
                Record::Error(e) => {
                    eprintln!("{}: skipping failed candidate '{}'", path.display(), e.candidate_id);
                }
            }
        }
    }
    let report = build_report(&scores, &truth)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    emit(args.output.as_deref(), &json)?;
    let table = report.to_table();
    match &args.table {
        Some(p) => fs::write(p, &table).with_context(|| format!("writing {}", p.display()))?,
        None => eprint!("{table}"),
    }
    Ok(true)
}

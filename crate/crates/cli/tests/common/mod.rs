#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::Rng;
use rand_distr::StandardNormal;
use xferscore::ingest::{write_array, write_npy};
use xferscore::rng::stream;
use xferscore::FeatureMatrix;

pub const LAYERS: usize = 6;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_xferscore"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn centroids(seed: u64, k: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rng = stream(seed, &[9]);
    (0..k)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| 2.0 * x / n).collect()
        })
        .collect()
}

fn write_labels(path: &Path, utts: &[(String, Vec<usize>)]) {
    let text: String =
        utts.iter().map(|(id, l)| format!("{}\n", serde_json::json!({"utt_id": id, "labels": l}))).collect();
    fs::write(path, text).unwrap();
}

/// Noise-only source domain of `count` utterances.
pub fn write_source(dir: &Path, seed: u64, count: usize, frames: usize, d: usize) -> PathBuf {
    let src = dir.join("source");
    fs::create_dir_all(&src).unwrap();
    let mut rng = stream(seed, &[8]);
    for u in 0..count {
        let data = (0..frames * d).map(|_| rng.sample(StandardNormal)).collect();
        write_array(&src.join(format!("s{u:03}.npy")), &FeatureMatrix::new(frames, d, data).unwrap()).unwrap();
    }
    src
}

/// Six candidate "layers" over one classification set; layer `k` scales the
/// class centroids by `0.25 (k + 1)` on top of shared frame noise. Ground
/// truth accuracy rises with `k`.
pub fn classification_benchmark(dir: &Path, seed: u64) -> PathBuf {
    let (classes, per_class, frames, d) = (3, 20, 5, 12);
    let mu = centroids(seed, classes, d);
    let mut rng = stream(seed, &[1]);
    let mut utts = Vec::new();
    let mut noise = Vec::new();
    for u in 0..classes * per_class {
        utts.push((format!("utt{u:03}"), vec![u % classes]));
        noise.push((0..frames * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>());
    }
    write_labels(&dir.join("labels.jsonl"), &utts);
    write_source(dir, seed, 20, frames, d);

    let mut cands = Vec::new();
    for k in 0..LAYERS {
        let layer = dir.join(format!("layer{}", k + 1));
        fs::create_dir_all(&layer).unwrap();
        let s = 0.25 * (k + 1) as f64;
        for ((id, l), eps) in utts.iter().zip(&noise) {
            let data = eps.iter().enumerate().map(|(i, e)| s * mu[l[0]][i % d] + e).collect();
            write_array(&layer.join(format!("{id}.npy")), &FeatureMatrix::new(frames, d, data).unwrap()).unwrap();
        }
        cands.push(serde_json::json!({
            "id": format!("layer-{}", k + 1),
            "features": format!("layer{}", k + 1),
            "labels": "labels.jsonl",
            "ground_truth_metric": 70.0 + 4.0 * k as f64,
            "metric_direction": "higher_better",
        }));
    }
    let manifest = serde_json::json!({
        "task_kind": "classification",
        "source_features": "source",
        "candidates": cands,
    });
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    path
}

// Blank-separated runs of each label; returns the per-frame symbols.
fn frame_script<R: Rng>(rng: &mut R, labels: &[usize], blank: usize) -> Vec<usize> {
    let mut out = vec![blank; rng.random_range(1..=2)];
    for (i, &l) in labels.iter().enumerate() {
        if i > 0 {
            out.extend(std::iter::repeat_n(blank, rng.random_range(1..=2)));
        }
        out.extend(std::iter::repeat_n(l, rng.random_range(2..=5)));
    }
    out.extend(std::iter::repeat_n(blank, rng.random_range(1..=2)));
    out
}

/// Six candidate "layers" over one sequence task with posterior grids peaked
/// on a known frame script. Frames of symbol `k` sit at centroid `k` scaled
/// by the layer strength. Ground-truth WER falls with the layer index.
pub fn sequence_benchmark(dir: &Path, seed: u64) -> PathBuf {
    let (vocab, n_utts, d) = (4, 24, 10);
    let blank = vocab;
    let mu = centroids(seed, vocab + 1, d);
    let mut rng = stream(seed, &[2]);
    let post = dir.join("posteriors");
    fs::create_dir_all(&post).unwrap();

    let mut utts = Vec::new();
    let mut scripts = Vec::new();
    let mut noise = Vec::new();
    for u in 0..n_utts {
        let len = rng.random_range(2..=4);
        let labels: Vec<usize> = (0..len).map(|_| rng.random_range(0..vocab)).collect();
        let script = frame_script(&mut rng, &labels, blank);
        let t = script.len();
        let mut grid = Vec::with_capacity(t * (vocab + 1));
        for &s in &script {
            let peak = rng.random_range(0.55..0.8);
            for c in 0..=vocab {
                let p = if c == s { peak } else { (1.0 - peak) / vocab as f64 };
                grid.push(f64::ln(p));
            }
        }
        let id = format!("utt{u:03}");
        write_npy(&post.join(format!("{id}.npy")), &[t, vocab + 1], &grid).unwrap();
        noise.push((0..t * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>());
        utts.push((id, labels));
        scripts.push(script);
    }
    write_labels(&dir.join("labels.jsonl"), &utts);

    let mut cands = Vec::new();
    for k in 0..LAYERS {
        let layer = dir.join(format!("layer{}", k + 1));
        fs::create_dir_all(&layer).unwrap();
        let s = 0.25 * (k + 1) as f64;
        for (((id, _), script), eps) in utts.iter().zip(&scripts).zip(&noise) {
            let t = script.len();
            let data = (0..t * d).map(|i| s * mu[script[i / d]][i % d] + eps[i]).collect();
            write_array(&layer.join(format!("{id}.npy")), &FeatureMatrix::new(t, d, data).unwrap()).unwrap();
        }
        cands.push(serde_json::json!({
            "id": format!("layer-{}", k + 1),
            "features": format!("layer{}", k + 1),
            "labels": "labels.jsonl",
            "posteriors": "posteriors",
            "ground_truth_metric": 40.0 - 5.0 * k as f64,
            "metric_direction": "lower_better",
        }));
    }
    let manifest = serde_json::json!({"task_kind": "sequence", "vocab_size": vocab, "candidates": cands});
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    path
}

/// Score records of a score file with the run header removed.
pub fn records_only(text: &str) -> String {
    let v: serde_json::Value = serde_json::from_str(text).unwrap();
    serde_json::to_string(&v["records"]).unwrap()
}

use std::fs;
use std::path::Path;

use proptest::prelude::*;
use xferscore::ingest::npy::{parse_npy, write_npy_to};
use xferscore::ingest::{
    assemble_dataset, load_manifest, write_array, AssembleOptions, IngestError, Manifest, MetricDirection, Posteriors,
    TaskKind,
};
use xferscore::FeatureMatrix;

fn ramp(rows: usize, cols: usize, offset: f64) -> FeatureMatrix {
    let data = (0..rows * cols).map(|i| offset + i as f64 * 0.25).collect();
    FeatureMatrix::new(rows, cols, data).unwrap()
}

fn write_jsonl(path: &Path, lines: &[(&str, &[usize])]) {
    let text: String =
        lines.iter().map(|(id, l)| format!("{}\n", serde_json::json!({"utt_id": id, "labels": l}))).collect();
    fs::write(path, text).unwrap();
}

fn uniform_grid_rows(frames: usize, width: usize) -> Vec<f64> {
    vec![-(width as f64).ln(); frames * width]
}

#[test]
fn pairs_utterances_with_labels() {
    let dir = tempfile::tempdir().unwrap();
    let feats = dir.path().join("feats");
    fs::create_dir(&feats).unwrap();
    write_array(&feats.join("u1.npy"), &ramp(10, 8, 0.0)).unwrap();
    write_array(&feats.join("u2.npy"), &ramp(12, 8, 100.0)).unwrap();
    write_jsonl(&dir.path().join("labels.jsonl"), &[("u1", &[0, 2]), ("u2", &[1])]);
    let text = r#"{"task_kind": "sequence", "candidates": [
        {"id": "c1", "features": "feats", "labels": "labels.jsonl", "posteriors": "uniform"}]}"#;
    let m = Manifest::parse(text, dir.path()).unwrap();
    let ds = assemble_dataset(&m, "c1", AssembleOptions::default()).unwrap();
    assert_eq!(ds.features.len(), 2);
    assert_eq!((ds.features[0].rows(), ds.features[0].cols()), (10, 8));
    assert_eq!((ds.features[1].rows(), ds.features[1].cols()), (12, 8));
    assert_eq!(ds.features[1].get(0, 0), 100.0);
    assert_eq!(ds.labels.utterances[0].labels, vec![0, 2]);
    assert_eq!(ds.labels.utterances[1].labels, vec![1]);
    assert_eq!(ds.posteriors, Some(Posteriors::Uniform));
    assert_eq!(ds.vocab_size(), 3);
}

#[test]
fn posterior_frame_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let feats = dir.path().join("feats");
    let post = dir.path().join("post");
    fs::create_dir(&feats).unwrap();
    fs::create_dir(&post).unwrap();
    write_array(&feats.join("u1.npy"), &ramp(10, 4, 0.0)).unwrap();
    xferscore::ingest::write_npy(&post.join("u1.npy"), &[9, 3], &uniform_grid_rows(9, 3)).unwrap();
    write_jsonl(&dir.path().join("labels.jsonl"), &[("u1", &[0, 1])]);
    let text = r#"{"task_kind": "sequence", "candidates": [
        {"id": "c1", "features": "feats", "labels": "labels.jsonl", "posteriors": "post"}]}"#;
    let m = Manifest::parse(text, dir.path()).unwrap();
    match assemble_dataset(&m, "c1", AssembleOptions::default()) {
        Err(IngestError::FrameCountMismatch { utt_id, features, posteriors }) => {
            assert_eq!((utt_id.as_str(), features, posteriors), ("u1", 10, 9));
        }
        other => panic!("expected FrameCountMismatch, got {other:?}"),
    }
}

#[test]
fn matching_posteriors_load() {
    let dir = tempfile::tempdir().unwrap();
    let feats = dir.path().join("feats");
    let post = dir.path().join("post");
    fs::create_dir(&feats).unwrap();
    fs::create_dir(&post).unwrap();
    write_array(&feats.join("u1.npy"), &ramp(6, 4, 0.0)).unwrap();
    xferscore::ingest::write_npy(&post.join("u1.npy"), &[6, 3], &uniform_grid_rows(6, 3)).unwrap();
    write_jsonl(&dir.path().join("labels.jsonl"), &[("u1", &[0, 1])]);
    let text = r#"{"task_kind": "sequence", "candidates": [
        {"id": "c1", "features": "feats", "labels": "labels.jsonl", "posteriors": "post"}]}"#;
    let m = Manifest::parse(text, dir.path()).unwrap();
    let ds = assemble_dataset(&m, "c1", AssembleOptions::default()).unwrap();
    match ds.posteriors {
        Some(Posteriors::Grids(g)) => {
            assert_eq!(g.len(), 1);
            assert_eq!(g[0].vocab_size(), 2);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn mean_pooling_matches_hand_mean() {
    let dir = tempfile::tempdir().unwrap();
    let feats = dir.path().join("feats");
    fs::create_dir(&feats).unwrap();
    let a = FeatureMatrix::from_rows(&[[1.0, -2.0, 0.5], [3.0, 4.0, 0.25], [-1.0, 7.0, 1.0]]).unwrap();
    let b = FeatureMatrix::from_rows(&[[10.0, 0.0, 0.0], [0.0, 10.0, 0.0]]).unwrap();
    write_array(&feats.join("x.npy"), &a).unwrap();
    write_array(&feats.join("y.npy"), &b).unwrap();
    write_jsonl(&dir.path().join("labels.jsonl"), &[("x", &[1]), ("y", &[0])]);
    let text = r#"{"task_kind": "classification", "candidates": [
        {"id": "c", "features": "feats", "labels": "labels.jsonl"}]}"#;
    let m = Manifest::parse(text, dir.path()).unwrap();
    let ds = assemble_dataset(&m, "c", AssembleOptions { pool_mean: true }).unwrap();
    let expect = [[1.0, 3.0, 0.583_333_333_333_333_3], [5.0, 5.0, 0.0]];
    for (f, e) in ds.features.iter().zip(expect) {
        assert_eq!(f.rows(), 1);
        for (got, want) in f.row(0).iter().zip(e) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }
}

#[test]
fn classification_needs_one_label() {
    let dir = tempfile::tempdir().unwrap();
    write_array(&dir.path().join("pooled.npy"), &ramp(2, 3, 0.0)).unwrap();
    write_jsonl(&dir.path().join("labels.jsonl"), &[("a", &[0, 1]), ("b", &[1])]);
    let text = r#"{"task_kind": "classification", "candidates": [
        {"id": "c", "features": "pooled.npy", "labels": "labels.jsonl"}]}"#;
    let m = Manifest::parse(text, dir.path()).unwrap();
    assert!(matches!(assemble_dataset(&m, "c", AssembleOptions::default()), Err(IngestError::InvalidLabels(_))));
}

#[test]
fn manifest_with_table_one_layout() {
    let wer = [
        62.63, 53.49, 53.61, 47.75, 37.02, 48.71, 42.13, 32.32, 21.74, 22.56, 19.86, 21.71, 25.56, 19.23, 20.09, 18.87,
        18.27,
    ];
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("src")).unwrap();
    fs::write(dir.path().join("labels.jsonl"), "").unwrap();
    for i in 1..=17 {
        fs::create_dir(dir.path().join(format!("conf{i:02}"))).unwrap();
    }
    let cands: Vec<_> = wer
        .iter()
        .enumerate()
        .map(|(i, w)| {
            serde_json::json!({
                "id": format!("Conf-{:02}", i + 1),
                "features": format!("conf{:02}", i + 1),
                "labels": "labels.jsonl",
                "ground_truth_metric": w,
                "metric_direction": "lower_better",
            })
        })
        .collect();
    let text = serde_json::json!({"task_kind": "sequence", "source_features": "src", "candidates": cands});
    let path = dir.path().join("manifest.json");
    fs::write(&path, text.to_string()).unwrap();
    let m = load_manifest(&path).unwrap();
    assert_eq!(m.task_kind, TaskKind::Sequence);
    assert_eq!(m.candidates.len(), 17);
    assert_eq!(m.candidates[16].id, "Conf-17");
    assert_eq!(m.candidates[0].ground_truth_metric, Some(62.63));
    assert_eq!(m.candidates[0].metric_direction, Some(MetricDirection::LowerBetter));
    assert_eq!(m.candidates[3].features, dir.path().join("conf04"));
    assert_eq!(m.source_for(&m.candidates[0]), Some(dir.path().join("src").as_path()));

    fs::remove_dir(dir.path().join("conf09")).unwrap();
    assert!(matches!(load_manifest(&path), Err(IngestError::MissingFile(p)) if p.ends_with("conf09")));
}

#[test]
fn manifest_rejections() {
    let base = Path::new("/tmp");
    let dup = r#"{"task_kind": "classification", "candidates": [
        {"id": "a", "features": "f", "labels": "l"}, {"id": "a", "features": "g", "labels": "l"}]}"#;
    assert!(matches!(Manifest::parse(dup, base), Err(IngestError::DuplicateCandidateId(id)) if id == "a"));
    let empty = r#"{"task_kind": "classification", "candidates": []}"#;
    assert!(matches!(Manifest::parse(empty, base), Err(IngestError::Parse(_))));
    let unknown = r#"{"task_kind": "classification", "candidates": [], "extra": 1}"#;
    assert!(matches!(Manifest::parse(unknown, base), Err(IngestError::Parse(_))));
}

#[test]
fn missing_utterance_file() {
    let dir = tempfile::tempdir().unwrap();
    let feats = dir.path().join("feats");
    fs::create_dir(&feats).unwrap();
    write_array(&feats.join("u1.npy"), &ramp(3, 2, 0.0)).unwrap();
    write_jsonl(&dir.path().join("labels.jsonl"), &[("u1", &[0]), ("u2", &[1])]);
    let text = r#"{"task_kind": "classification", "candidates": [
        {"id": "c", "features": "feats", "labels": "labels.jsonl"}]}"#;
    let m = Manifest::parse(text, dir.path()).unwrap();
    assert!(matches!(assemble_dataset(&m, "c", AssembleOptions::default()), Err(IngestError::UttIdMismatch(_))));
}

proptest! {
    #[test]
    fn npy_round_trip_is_byte_identical(
        rows in 1usize..6,
        cols in 1usize..6,
        seed in any::<u64>(),
    ) {
        let data: Vec<f64> = (0..rows * cols)
            .map(|i| ((seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) >> 11) as f64) * 1e-9 - 3.0)
            .collect();
        let mut first = Vec::new();
        write_npy_to(&mut first, &[rows, cols], &data).unwrap();
        prop_assert_eq!((first.len() - data.len() * 8) % 64, 0);
        let arr = parse_npy(&first).unwrap();
        prop_assert_eq!(&arr.shape, &vec![rows, cols]);
        prop_assert_eq!(&arr.data, &data);
        let mut second = Vec::new();
        write_npy_to(&mut second, &arr.shape, &arr.data).unwrap();
        prop_assert_eq!(first, second);
    }
}

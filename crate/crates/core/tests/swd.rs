use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use xferscore::rng::stream;
use xferscore::swd::{median, sliced_w1, swd_score, w1_1d, LatentBatchPair, SwdConfig};
use xferscore::FeatureMatrix;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

// Optimal assignment cost by trying every matching.
fn assignment_w1(a: &[f64], b: &[f64]) -> f64 {
    permutations(a.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).abs()).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        / a.len() as f64
}

fn cloud(seed: u64, n: usize, d: usize, shift: &[f64]) -> FeatureMatrix {
    let mut rng = stream(seed, &[]);
    let data = (0..n * d).map(|k| rng.sample::<f64, _>(StandardNormal) + shift[k % d]).collect();
    FeatureMatrix::new(n, d, data).unwrap()
}

fn utterances(seed: u64, count: usize, frames: usize, d: usize, gap: impl Fn(usize) -> f64) -> Vec<FeatureMatrix> {
    let mut rng = stream(seed, &[]);
    (0..count)
        .map(|_| {
            let data = (0..frames * d).map(|k| rng.sample::<f64, _>(StandardNormal) + gap(k / d)).collect();
            FeatureMatrix::new(frames, d, data).unwrap()
        })
        .collect()
}

#[test]
fn sorted_formula_matches_assignment_brute_force() {
    for i in 0..100u64 {
        let mut rng = stream(31, &[i]);
        let n = rng.random_range(1..=6);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let got = w1_1d(&a, &b).unwrap();
        let want = assignment_w1(&a, &b);
        assert!((got - want).abs() < 1e-12, "instance {i}: {got} vs {want}");
    }
}

#[test]
fn identity_inputs_are_zero() {
    let m = cloud(32, 40, 5, &[0.0; 5]);
    let pair = LatentBatchPair::new(m.clone(), m.clone()).unwrap();
    assert_eq!(sliced_w1(&pair, &SwdConfig::default()).unwrap(), 0.0);
    let utts = utterances(33, 8, 6, 3, |_| 0.0);
    let s = swd_score(&utts, &utts, &SwdConfig::default()).unwrap();
    assert_eq!(s.score, 0.0);
    assert!(s.per_timestep.iter().all(|v| *v == 0.0));
}

#[test]
fn one_dimensional_slice_is_plain_w1() {
    for seed in 0..10u64 {
        let a = cloud(34, 30, 1, &[0.0]);
        let b = cloud(35 + seed, 30, 1, &[1.5]);
        let direct = w1_1d(a.as_slice(), b.as_slice()).unwrap();
        for m in [1, 7, 128] {
            let pair = LatentBatchPair::new(a.clone(), b.clone()).unwrap();
            let got = sliced_w1(&pair, &SwdConfig { n_projections: m, batch_size: 256, seed }).unwrap();
            assert!((got - direct).abs() <= 1e-12 * direct.max(1.0), "{got} vs {direct}");
        }
    }
}

#[test]
fn farther_shift_gives_larger_distance() {
    let d = 8;
    let e: Vec<f64> = (0..d).map(|k| if k == 0 { 1.0 } else { 0.0 }).collect();
    let base = cloud(36, 500, d, &[0.0; 8]);
    let far = cloud(37, 500, d, &e.iter().map(|v| 5.0 * v).collect::<Vec<_>>());
    let near = {
        let data = base.as_slice().iter().enumerate().map(|(k, v)| v + e[k % d]).collect();
        FeatureMatrix::new(500, d, data).unwrap()
    };
    let cfg = SwdConfig { n_projections: 512, batch_size: 500, seed: 1 };
    let a = sliced_w1(&LatentBatchPair::new(base.clone(), far).unwrap(), &cfg).unwrap();
    let b = sliced_w1(&LatentBatchPair::new(base, near).unwrap(), &cfg).unwrap();
    assert!(a > 0.0 && a > b, "{a} vs {b}");
}

#[test]
fn monte_carlo_estimate_is_stable() {
    let a = cloud(38, 200, 2, &[0.0, 0.0]);
    let b = cloud(39, 200, 2, &[2.0, -1.0]);
    let pair = LatentBatchPair::new(a, b).unwrap();
    let coarse = sliced_w1(&pair, &SwdConfig { n_projections: 4096, batch_size: 256, seed: 5 }).unwrap();
    let fine = sliced_w1(&pair, &SwdConfig { n_projections: 65536, batch_size: 256, seed: 6 }).unwrap();
    let rel = (coarse - fine).abs() / fine;
    assert!(rel < 0.02, "{coarse} vs {fine} ({rel})");
}

#[test]
fn median_follows_middle_timestep() {
    // one-dimensional latents with a mean gap of 0.5 t: every direction is +-1,
    // so each timestep's value is the plain 1-D distance
    let src = utterances(40, 12, 7, 1, |_| 0.0);
    let tgt = utterances(41, 12, 7, 1, |t| 0.5 * t as f64);
    let s = swd_score(&src, &tgt, &SwdConfig::default()).unwrap();
    let direct: Vec<f64> = (0..7)
        .map(|t| {
            let a: Vec<f64> = src.iter().map(|u| u.get(t, 0)).collect();
            let b: Vec<f64> = tgt.iter().map(|u| u.get(t, 0)).collect();
            w1_1d(&a, &b).unwrap()
        })
        .collect();
    for (got, want) in s.per_timestep.iter().zip(&direct) {
        assert!((got - want).abs() < 1e-12);
    }
    assert!(direct.windows(2).all(|w| w[0] < w[1]), "{direct:?}");
    assert_eq!(s.score, s.per_timestep[3]);
    assert_eq!(s.score, median(&s.per_timestep).unwrap());
}

#[test]
fn subsampling_and_truncation() {
    let src = utterances(42, 30, 9, 4, |_| 0.0);
    let mut tgt = utterances(43, 10, 12, 4, |_| 1.0);
    tgt[3] = cloud(44, 5, 4, &[1.0; 4]);
    let cfg = SwdConfig { n_projections: 16, batch_size: 8, seed: 3 };
    let s = swd_score(&src, &tgt, &cfg).unwrap();
    assert_eq!(s.t_eval, 5);
    assert_eq!(s.batch, 8);
    assert!(s.subsampled);
    assert_eq!(s, swd_score(&src, &tgt, &cfg).unwrap());
    let other = swd_score(&src, &tgt, &SwdConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(s.score, other.score);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn symmetric_without_subsampling(seed in any::<u64>(), n in 1usize..12, d in 1usize..5, t in 1usize..5) {
        let a = utterances(seed, n, t, d, |_| 0.0);
        let b = utterances(seed ^ 1, n, t + 1, d, |_| 0.7);
        let cfg = SwdConfig { n_projections: 24, batch_size: 64, seed };
        let ab = swd_score(&a, &b, &cfg).unwrap();
        let ba = swd_score(&b, &a, &cfg).unwrap();
        prop_assert_eq!(ab.score.to_bits(), ba.score.to_bits());
        prop_assert!(ab.score >= 0.0);
    }

    #[test]
    fn same_seed_same_bits(seed in any::<u64>()) {
        let a = utterances(seed, 6, 4, 3, |_| 0.0);
        let b = utterances(seed ^ 2, 9, 4, 3, |_| 0.3);
        let cfg = SwdConfig { n_projections: 32, batch_size: 4, seed };
        let x = swd_score(&a, &b, &cfg).unwrap();
        let y = swd_score(&a, &b, &cfg).unwrap();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn w1_is_a_metric_on_equal_size_samples(
        a in prop::collection::vec(-10.0f64..10.0, 1..20),
        shift in -3.0f64..3.0,
    ) {
        let b: Vec<f64> = a.iter().map(|v| v + shift).collect();
        let d = w1_1d(&a, &b).unwrap();
        prop_assert!((d - shift.abs()).abs() < 1e-9);
        prop_assert_eq!(w1_1d(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(d, w1_1d(&b, &a).unwrap());
    }
}

mod common;

use common::Fixture;
use pot_core::ingest::{FeatureMatrix, LogitMatrix};
use pot_core::prototypes::{PrototypeSet, PrototypeSource};
use pot_core::scorer::{
    baseline_scores, batch_permutation, make_virtual_outliers, score_batch, score_stream,
    test_mean, BaselineKind,
};
use pot_core::transport::{Lambda, SolverConfig};
use proptest::prelude::*;

fn triangle() -> PrototypeSet {
    let p = FeatureMatrix::from_rows(&[[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]]).unwrap();
    PrototypeSet::new(p, vec![1.0 / 3.0; 3], PrototypeSource::FromData).unwrap()
}

const SCALENE: [[f64; 2]; 3] = [[0.0, 0.0], [5.0, 0.0], [0.0, 3.0]];

// No two reflected points are equidistant from a sample, so the small-lambda
// plan has a unique limit.
fn scalene() -> PrototypeSet {
    let p = FeatureMatrix::from_rows(&SCALENE).unwrap();
    PrototypeSet::new(p, vec![1.0 / 3.0; 3], PrototypeSource::FromData).unwrap()
}

fn gaussian(rng: &mut Fixture, n: usize, d: usize, scale: f64) -> FeatureMatrix {
    let data = (0..n * d).map(|_| scale * rng.normal()).collect();
    FeatureMatrix::new(n, d, data).unwrap()
}

fn random_protos(rng: &mut Fixture, c: usize, d: usize) -> PrototypeSet {
    let p = gaussian(rng, c, d, 3.0);
    PrototypeSet::new(p, rng.simplex(c), PrototypeSource::FromData).unwrap()
}

fn translated(m: &FeatureMatrix, shift: &[f64]) -> FeatureMatrix {
    let data = m
        .iter_rows()
        .flat_map(|r| r.iter().zip(shift).map(|(x, s)| x + s))
        .collect();
    FeatureMatrix::new(m.rows(), m.cols(), data).unwrap()
}

#[test]
fn batch_equal_to_prototypes_scores_negative() {
    let protos = scalene();
    let cfg = SolverConfig::default().with_lambda(Lambda::Fixed(1e-3));
    let b = score_batch(&protos, protos.prototypes(), 2.0, &cfg).unwrap();
    // The outlier solve at this lambda creeps towards its permutation limit
    // far slower than 1e-8 per 10k sweeps, so only the limit is checked.
    for j in 0..3 {
        assert!(b.t_id[j].abs() < 1e-9, "T[{j}] = {}", b.t_id[j]);
        assert!(b.scores[j] < 0.0, "S[{j}] = {}", b.scores[j]);
    }
    // With the batch mean at (5/3, 1) the outliers are the reflections
    // 2M - eta; the plan is a permutation, so T* is a matching cost / 3.
    let m = [5.0 / 3.0, 1.0];
    let outl: Vec<[f64; 2]> = SCALENE
        .iter()
        .map(|e| [2.0 * m[0] - e[0], 2.0 * m[1] - e[1]])
        .collect();
    let pts = SCALENE;
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let best = perms
        .iter()
        .map(|p| (0..3).map(|i| dist(outl[i], pts[p[i]])).sum::<f64>() / 3.0)
        .fold(f64::INFINITY, f64::min);
    let total_out: f64 = b.t_out.iter().sum();
    assert!((total_out - best).abs() < 1e-3, "{total_out} vs {best}");
}

#[test]
fn far_sample_has_largest_score() {
    let protos = triangle();
    let mut rng = Fixture::new(17);
    let mut rows = Vec::new();
    for eta in protos.prototypes().iter_rows() {
        for _ in 0..5 {
            rows.push([eta[0] + 0.1 * rng.normal(), eta[1] + 0.1 * rng.normal()]);
        }
    }
    let mean = test_mean(&FeatureMatrix::from_rows(&rows).unwrap());
    let vo = make_virtual_outliers(&protos, &mean, 2.0).unwrap();
    let star = vo.outliers.row(0);
    rows.push([
        star[0] + 10.0 * (star[0] - mean[0]),
        star[1] + 10.0 * (star[1] - mean[1]),
    ]);
    let batch = FeatureMatrix::from_rows(&rows).unwrap();
    let s = score_batch(&protos, &batch, 2.0, &SolverConfig::default()).unwrap();
    let argmax = (0..s.scores.len())
        .max_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]))
        .unwrap();
    assert_eq!(argmax, rows.len() - 1, "{:?}", s.scores);
}

#[test]
fn stream_splits_into_full_and_remainder_batches() {
    let mut rng = Fixture::new(4);
    let protos = random_protos(&mut rng, 3, 4);
    let test = gaussian(&mut rng, 1000, 4, 2.0);
    let cfg = SolverConfig::default();
    let a = score_stream(&protos, &test, 512, 11, 2.0, &cfg).unwrap();
    assert_eq!(a.num_batches, 2);
    assert_eq!(a.batch_index.iter().filter(|&&b| b == 0).count(), 512);
    assert_eq!(a.batch_index.iter().filter(|&&b| b == 1).count(), 488);
    assert!(a.all_converged);
    let b = score_stream(&protos, &test, 512, 11, 2.0, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn stream_with_one_batch_matches_direct_scoring() {
    let mut rng = Fixture::new(8);
    let protos = random_protos(&mut rng, 4, 3);
    let test = gaussian(&mut rng, 60, 3, 2.0);
    let cfg = SolverConfig::default();
    let stream = score_stream(&protos, &test, 100, 5, 2.0, &cfg).unwrap();
    let direct = score_batch(&protos, &test, 2.0, &cfg).unwrap();
    assert_eq!(stream.num_batches, 1);
    for (s, d) in stream.scores.iter().zip(&direct.scores) {
        assert!((s - d).abs() < 1e-9, "{s} vs {d}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn score_is_difference_of_costs(seed in any::<u64>(), omega in 1.1f64..5.0) {
        let mut rng = Fixture::new(seed);
        let protos = random_protos(&mut rng, 3, 3);
        let test = gaussian(&mut rng, 20, 3, 2.0);
        let b = score_batch(&protos, &test, omega, &SolverConfig::default()).unwrap();
        for j in 0..test.rows() {
            prop_assert_eq!(b.scores[j], b.t_id[j] - b.t_out[j]);
        }
    }

    #[test]
    fn outliers_reflect_through_mean(seed in any::<u64>(), omega in 1.01f64..10.0) {
        let mut rng = Fixture::new(seed);
        let protos = random_protos(&mut rng, 4, 3);
        let mean: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let vo = make_virtual_outliers(&protos, &mean, omega).unwrap();
        prop_assert_eq!(vo.masses.as_slice(), protos.masses());
        for (eta, star) in protos.prototypes().iter_rows().zip(vo.outliers.iter_rows()) {
            for k in 0..3 {
                let expected = eta[k] + omega * (mean[k] - eta[k]);
                prop_assert!((star[k] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
            }
        }
    }

    #[test]
    fn translation_invariant(seed in any::<u64>(), shift in prop::array::uniform3(-50.0f64..50.0)) {
        let mut rng = Fixture::new(seed);
        let protos = random_protos(&mut rng, 3, 3);
        let test = gaussian(&mut rng, 25, 3, 2.0);
        let moved = PrototypeSet::new(
            translated(protos.prototypes(), &shift),
            protos.masses().to_vec(),
            PrototypeSource::FromData,
        ).unwrap();
        let cfg = SolverConfig::default();
        let a = score_batch(&protos, &test, 2.0, &cfg).unwrap();
        let b = score_batch(&moved, &translated(&test, &shift), 2.0, &cfg).unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            prop_assert!((x - y).abs() <= 1e-9, "{} vs {}", x, y);
        }
    }

    #[test]
    fn stream_restores_sample_order(seed in any::<u64>(), n in 10usize..80, batch in 2usize..30) {
        let mut rng = Fixture::new(seed);
        let protos = random_protos(&mut rng, 3, 2);
        let test = gaussian(&mut rng, n, 2, 2.0);
        let cfg = SolverConfig::default();
        let stream = score_stream(&protos, &test, batch, seed, 2.0, &cfg).unwrap();
        let order = batch_permutation(n, seed);
        for (k, idx) in order.chunks(batch).enumerate() {
            let sub = test.select_rows(idx).unwrap();
            let direct = score_batch(&protos, &sub, 2.0, &cfg).unwrap();
            for (pos, &j) in idx.iter().enumerate() {
                prop_assert_eq!(stream.scores[j], direct.scores[pos]);
                prop_assert_eq!(stream.batch_index[j], k);
            }
        }
    }

    #[test]
    fn baseline_shift(seed in any::<u64>(), c in -20.0f64..20.0) {
        let mut rng = Fixture::new(seed);
        let logits = gaussian(&mut rng, 10, 5, 3.0);
        let shifted = translated(&logits, &[c; 5]);
        let (l, s) = (LogitMatrix::new(logits), LogitMatrix::new(shifted));
        let e0 = baseline_scores(&l, BaselineKind::Energy);
        let e1 = baseline_scores(&s, BaselineKind::Energy);
        let m0 = baseline_scores(&l, BaselineKind::Msp);
        let m1 = baseline_scores(&s, BaselineKind::Msp);
        for i in 0..10 {
            prop_assert!((e1[i] - e0[i] - c).abs() <= 1e-9);
            prop_assert!((m1[i] - m0[i]).abs() <= 1e-12);
            prop_assert!(m0[i] > 0.0 && m0[i] <= 1.0);
        }
    }
}

mod common;

use coarsegrain::data::Width;
use coarsegrain::encoding::ridge_fit;
use coarsegrain::pca::{fit_pca, fit_pca_full, project_2d};
use coarsegrain::probe::{alignment_vs_k, reconstruct_topk};
use coarsegrain::rdm::{compute_rdm, Metric};
use coarsegrain::synth::generate_hierarchical_data;
use coarsegrain::trainer::{train, MlpConfig};
use coarsegrain::{
    align_by_ids, read_embedding, recursive_median_partition, rsa_align, write_embedding,
    EmbeddingMatrix, LabelSet, Rdm, SplitMode,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(n: usize, p: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    EmbeddingMatrix::with_default_ids(&rows, "gaussian").unwrap()
}

fn frobenius(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn partition_balance_prefix_determinism_scale(
        n in 8usize..300,
        p in 6usize..16,
        depth in 1usize..=5,
        seed in any::<u64>(),
        scale in 0.01f64..100.0,
    ) {
        prop_assume!((1usize << depth) <= n);
        let m = gaussian(n, p, seed);
        let basis = fit_pca(&m, depth).unwrap();
        let ls = recursive_median_partition(&m, &basis, depth, SplitMode::Global).unwrap();

        let k = 1usize << depth;
        let (lo, hi) = (n / k, n.div_ceil(k));
        for s in ls.class_sizes() {
            prop_assert!(s >= lo && s <= hi, "size {s} outside [{lo}, {hi}]");
        }
        prop_assert_eq!(ls.bits_per_stimulus(), depth as f64);

        for d in 1..depth {
            let shallow = recursive_median_partition(&m, &basis, d, SplitMode::Global).unwrap();
            prop_assert_eq!(&ls.truncate(d).unwrap(), &shallow);
        }

        let again = recursive_median_partition(&m, &basis, depth, SplitMode::Global).unwrap();
        prop_assert_eq!(&ls, &again);

        let scaled = m.with_data(m.data().iter().map(|x| x * scale).collect()).unwrap();
        let sbasis = fit_pca(&scaled, depth).unwrap();
        let sls = recursive_median_partition(&scaled, &sbasis, depth, SplitMode::Global).unwrap();
        prop_assert_eq!(&ls, &sls);
    }

    #[test]
    fn local_mode_is_balanced(n in 8usize..200, depth in 1usize..=3, seed in any::<u64>()) {
        let m = gaussian(n, 5, seed);
        let basis = fit_pca(&m, 1).unwrap();
        let ls = recursive_median_partition(&m, &basis, depth, SplitMode::Local).unwrap();
        let k = 1usize << depth;
        for s in ls.class_sizes() {
            prop_assert!(s >= n / k && s <= n.div_ceil(k));
        }
    }

    #[test]
    fn pca_orthonormal_with_sign_convention(n in 3usize..60, p in 1usize..20, seed in any::<u64>()) {
        let m = gaussian(n, p, seed);
        let basis = fit_pca_full(&m).unwrap();
        let c = &basis.components;
        for i in 0..c.len() {
            for j in 0..c.len() {
                let dot: f64 = c[i].iter().zip(&c[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() <= 1e-10);
            }
            let largest = c[i]
                .iter()
                .copied()
                .max_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap())
                .unwrap();
            prop_assert!(largest > 0.0);
        }
        prop_assert!(basis.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn project_2d_columns_are_centered(n in 3usize..80, p in 2usize..10, seed in any::<u64>()) {
        let m = gaussian(n, p, seed);
        let proj = project_2d(&m).unwrap();
        prop_assert_eq!(proj.n_cols(), 2);
        for c in 0..2 {
            let mean = (0..n).map(|i| proj.get(i, c)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() <= 1e-10);
        }
    }

    #[test]
    fn emb1_roundtrip_is_bitwise(
        rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..20),
    ) {
        let m = EmbeddingMatrix::with_default_ids(&rows, "roundtrip").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.emb");
        write_embedding(&m, &path, Width::F64).unwrap();
        let back = read_embedding(&path).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert!(back.data().iter().zip(m.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn align_by_ids_is_idempotent(n in 2usize..30, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(n, 2, seed);
        let keep: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.7)).collect();
        prop_assume!(!keep.is_empty());
        let mut order = keep.clone();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let b = a.select_rows(&order).unwrap();

        let (a1, b1) = align_by_ids(&a, &b).unwrap();
        prop_assert_eq!(a1.ids(), b1.ids());
        let (a2, b2) = align_by_ids(&a1, &b1).unwrap();
        prop_assert_eq!(&a1, &a2);
        prop_assert_eq!(&b1, &b2);
    }

    #[test]
    fn reconstruction_error_non_increasing_and_idempotent(
        n in 4usize..40,
        p in 2usize..12,
        seed in any::<u64>(),
    ) {
        let m = gaussian(n, p, seed);
        let basis = fit_pca_full(&m).unwrap();
        let mut previous = f64::INFINITY;
        for k in 0..=basis.n_components() {
            let r = reconstruct_topk(&m, &basis, k).unwrap();
            let err = frobenius(&m, &r);
            prop_assert!(err <= previous + 1e-9, "k={k}: {err} > {previous}");
            previous = err;

            let rr = reconstruct_topk(&r, &basis, k).unwrap();
            prop_assert!(frobenius(&r, &rr) <= 1e-10 * (1.0 + frobenius(&r, &r.with_data(vec![0.0; n * p]).unwrap())));
        }
        prop_assert!(previous <= 1e-9);
    }

    #[test]
    fn ridge_ignores_constant_feature_shifts(n in 3usize..20, p in 1usize..8, seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let y = DMatrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
        let mut shifted = x.clone();
        shifted.column_mut(0).add_scalar_mut(shift);
        let a = ridge_fit(&x, &y, 0.5).unwrap().predict(&x);
        let b = ridge_fit(&shifted, &y, 0.5).unwrap().predict(&shifted);
        for (u, v) in a.iter().zip(b.iter()) {
            prop_assert!((u - v).abs() <= 1e-8);
        }
    }
}

#[test]
fn ground_truth_is_ultrametric() {
    let h = generate_hierarchical_data(5, 6, 8, 0.3, 11).unwrap();
    let rdm = h.ground_truth_rdm().unwrap();
    let n = rdm.n();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10_000 {
        let (i, j, k) = (
            rng.random_range(0..n),
            rng.random_range(0..n),
            rng.random_range(0..n),
        );
        assert!(rdm.get(i, k) <= rdm.get(i, j).max(rdm.get(j, k)));
    }
    for i in 0..n {
        for j in 0..n {
            assert_eq!(rdm.get(i, j) == 0.0, h.tree_paths[i] == h.tree_paths[j]);
        }
    }
}

#[test]
fn label_permutation_leaves_loss_trajectory_unchanged() {
    let h = generate_hierarchical_data(2, 20, 6, 0.5, 21).unwrap();
    let ls = h.leaf_labels().unwrap();
    let perm = [2usize, 0, 3, 1];
    let permuted = LabelSet::flat(
        ls.ids().to_vec(),
        ls.classes().iter().map(|&c| perm[c]).collect(),
        4,
    )
    .unwrap();
    let mut config = MlpConfig::new(vec![6, 12], 4, 15, 5);
    config.batch_size = 16;
    let (_, a) = train(&config, &h.data, &ls).unwrap();
    let (_, b) = train(&config, &h.data, &permuted).unwrap();
    for (x, y) in a.loss.iter().zip(&b.loss) {
        assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
    }
}

#[test]
fn training_reduces_loss_at_every_k() {
    let h = generate_hierarchical_data(4, 12, 8, 0.5, 31).unwrap();
    let basis = fit_pca(&h.leaf_means, 4).unwrap();
    for depth in 1..=4 {
        let ls =
            recursive_median_partition(&h.leaf_means, &basis, depth, SplitMode::Global).unwrap();
        let config = MlpConfig::new(vec![8, 16], 1 << depth, 20, 7);
        let (_, report) = train(&config, &h.data, &ls).unwrap();
        let (first, last) = (report.loss[0], *report.loss.last().unwrap());
        assert!(last < first, "K={}: {last} >= {first}", 1 << depth);
    }
}

#[test]
fn full_rank_probe_equals_direct_alignment() {
    let h = generate_hierarchical_data(3, 5, 6, 0.4, 41).unwrap();
    let target = h.ground_truth_rdm().unwrap();
    let curve =
        alignment_vs_k(&h.data, &target, None, Metric::Correlation, 50, 3, "truth").unwrap();
    let direct = rsa_align(&compute_rdm(&h.data, Metric::Correlation).unwrap(), &target).unwrap();
    assert_eq!(*curve.ks.last().unwrap(), curve.full_rank);
    let last = curve.alignments.last().unwrap();
    assert!((last.rho - direct).abs() <= 1e-10);
}

#[test]
fn rank_one_probe_has_single_point() {
    let rows: Vec<Vec<f64>> = [0.0, 1.0, 3.0, 7.0, 12.0, 20.0]
        .iter()
        .map(|&t| vec![t, 2.0 * t, -t])
        .collect();
    let m = EmbeddingMatrix::with_default_ids(&rows, "line").unwrap();
    let target = compute_rdm(&gaussian(6, 3, 9), Metric::Euclidean).unwrap();
    let curve = alignment_vs_k(&m, &target, None, Metric::Euclidean, 50, 1, "noise").unwrap();
    assert_eq!(curve.ks, vec![1]);
    let direct = rsa_align(&compute_rdm(&m, Metric::Euclidean).unwrap(), &target).unwrap();
    assert!((curve.alignments[0].rho - direct).abs() <= 1e-10);
}

#[test]
fn two_blobs_are_captured_by_first_component() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|i| {
            let offset = if i < 20 { -10.0 } else { 10.0 };
            (0..5)
                .map(|d| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    if d == 0 {
                        offset + z
                    } else {
                        z
                    }
                })
                .collect()
        })
        .collect();
    let m = EmbeddingMatrix::with_default_ids(&rows, "blobs").unwrap();
    let block: Vec<f64> = (0..40 * 40)
        .map(|c| {
            if (c / 40 < 20) == (c % 40 < 20) {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    let target = Rdm::new(m.ids().to_vec(), block, Metric::Precomputed).unwrap();
    let curve = alignment_vs_k(
        &m,
        &target,
        Some(&[1, 5]),
        Metric::Euclidean,
        50,
        2,
        "block",
    )
    .unwrap();
    assert!((curve.alignments[0].rho - curve.alignments[1].rho).abs() <= 0.05);
}

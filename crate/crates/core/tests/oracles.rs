mod common;

use coarsegrain::encoding::{cv_encoding_score, default_lambdas, ridge_fit};
use coarsegrain::rsa::{bootstrap_ci_with, bootstrap_replicates, per_concept_alignment};
use coarsegrain::stats::spearman_rank_corr;
use coarsegrain::trainer::{gradient_check, train, MlpConfig};
use coarsegrain::{rsa_align, EmbeddingMatrix, LabelSet, Metric, Rdm};
use common::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_rdm(n: usize, rng: &mut ChaCha8Rng, tie_levels: Option<u32>) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..i {
            let v = match tie_levels {
                Some(levels) => rng.random_range(1..=levels) as f64,
                None => rng.random::<f64>(),
            };
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

fn to_rdm(m: &[Vec<f64>]) -> Rdm {
    let ids = (0..m.len()).map(|i| format!("s{i}")).collect();
    Rdm::new(
        ids,
        m.iter().flatten().copied().collect(),
        Metric::Precomputed,
    )
    .unwrap()
}

#[test]
fn spearman_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for trial in 0..200 {
        let n = rng.random_range(3..40);
        let ties = trial % 2 == 0;
        let draw = |rng: &mut ChaCha8Rng| -> f64 {
            if ties {
                rng.random_range(0..5) as f64
            } else {
                StandardNormal.sample(rng)
            }
        };
        let x: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        match brute_spearman(&x, &y) {
            Some(want) => {
                let got = spearman_rank_corr(&x, &y).unwrap();
                assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
            }
            None => assert!(spearman_rank_corr(&x, &y).is_err()),
        }
    }
}

#[test]
fn per_concept_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..20 {
        let a = random_rdm(6, &mut rng, None);
        let b = random_rdm(6, &mut rng, None);
        let got = per_concept_alignment(&to_rdm(&a), &to_rdm(&b)).unwrap();
        for i in 0..6 {
            let ra: Vec<f64> = (0..6).filter(|&j| j != i).map(|j| a[i][j]).collect();
            let rb: Vec<f64> = (0..6).filter(|&j| j != i).map(|j| b[i][j]).collect();
            let want = brute_spearman(&ra, &rb).unwrap();
            assert!((got[i].unwrap() - want).abs() <= 1e-12);
        }
    }
}

#[test]
fn rsa_is_symmetric_and_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..20 {
        let a = random_rdm(9, &mut rng, Some(4));
        let b = random_rdm(9, &mut rng, None);
        let (ra, rb) = (to_rdm(&a), to_rdm(&b));
        let rho = rsa_align(&ra, &rb).unwrap();
        assert_eq!(rho, rsa_align(&rb, &ra).unwrap());
        assert!((rho - brute_spearman(&lower(&a), &lower(&b)).unwrap()).abs() <= 1e-12);

        let mut perm: Vec<usize> = (0..9).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let pa = ra.select(&perm).unwrap();
        let pb = rb.select(&perm).unwrap();
        assert!((rsa_align(&pa, &pb).unwrap() - rho).abs() <= 1e-12);
    }
}

#[test]
fn monotone_maps_give_perfect_alignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let a = to_rdm(&random_rdm(12, &mut rng, None));
    for f in [|x: f64| x * x, f64::exp, |x: f64| 3.0 * x + 1.0] {
        let b = a.map_off_diagonal(f).unwrap();
        assert!((rsa_align(&a, &b).unwrap() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn bootstrap_three_stimuli_matches_enumeration() {
    let a = vec![
        vec![0.0, 0.1, 0.2],
        vec![0.1, 0.0, 0.3],
        vec![0.2, 0.3, 0.0],
    ];
    let b = vec![
        vec![0.0, 0.3, 0.1],
        vec![0.3, 0.0, 0.2],
        vec![0.1, 0.2, 0.0],
    ];
    let (exact, degenerate) = exhaustive_bootstrap(&a, &b);
    assert_eq!(exact.len() + degenerate, 27);
    assert_eq!(degenerate, 21);

    let (ra, rb) = (to_rdm(&a), to_rdm(&b));
    let reps = bootstrap_replicates(&ra, &rb, 10_000, 5).unwrap();
    let exact_mean = exact.iter().sum::<f64>() / exact.len() as f64;
    assert!((reps.mean().unwrap() - exact_mean).abs() <= 0.02);
    let skip_rate = reps.skipped as f64 / 10_000.0;
    assert!((skip_rate - 21.0 / 27.0).abs() < 0.02, "{skip_rate}");

    let res = bootstrap_ci_with(&ra, &rb, 10_000, 5, 1.0).unwrap();
    assert!((res.ci_low - brute_percentile(&exact, 2.5)).abs() <= 0.05);
    assert!((res.ci_high - brute_percentile(&exact, 97.5)).abs() <= 0.05);
}

#[test]
fn bootstrap_four_stimuli_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let a = random_rdm(4, &mut rng, None);
    let b = random_rdm(4, &mut rng, None);
    let (exact, _) = exhaustive_bootstrap(&a, &b);
    let exact_mean = exact.iter().sum::<f64>() / exact.len() as f64;
    let reps = bootstrap_replicates(&to_rdm(&a), &to_rdm(&b), 20_000, 6).unwrap();
    assert!((reps.mean().unwrap() - exact_mean).abs() <= 0.02);
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[test]
fn ridge_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for _ in 0..50 {
        let n = rng.random_range(2..=20);
        let p = rng.random_range(1..=20);
        let u = rng.random_range(1..=20);
        let lambda = rng.random_range(0.1..10.0);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let y = DMatrix::from_fn(n, u, |_, _| StandardNormal.sample(&mut rng));
        let sol = ridge_fit(&x, &y, lambda).unwrap();
        let want = closed_form_ridge(&to_rows(&x), &to_rows(&y), lambda);
        for i in 0..p {
            for j in 0..u {
                assert!((sol.weights[(i, j)] - want[i][j]).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn encoding_null_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let x = DMatrix::from_fn(500, 10, |_, _| StandardNormal.sample(&mut rng));
    let y = DMatrix::from_fn(500, 6, |_, _| StandardNormal.sample(&mut rng));
    let score = cv_encoding_score(&x, &y, &default_lambdas(), 5, 1).unwrap();
    assert!(score.mean_r.unwrap().abs() <= 0.1, "{:?}", score.mean_r);

    // permuting stimulus order of the responses keeps the null
    let mut perm: Vec<usize> = (0..500).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
    let permuted = y.select_rows(&perm);
    let null = cv_encoding_score(&x, &permuted, &default_lambdas(), 5, 1).unwrap();
    assert!(null.mean_r.unwrap().abs() <= 0.1);
}

#[test]
fn encoding_scores_invariant_to_affine_response_rescaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let x = DMatrix::from_fn(80, 4, |_, _| StandardNormal.sample(&mut rng));
    let w = DMatrix::from_fn(4, 3, |_, _| StandardNormal.sample(&mut rng));
    let noise = DMatrix::from_fn(80, 3, |_, _| StandardNormal.sample(&mut rng));
    let y: DMatrix<f64> = &x * w + noise;
    let mut scaled = y.clone();
    scaled.column_mut(1).scale_mut(7.5);
    scaled.column_mut(1).add_scalar_mut(-3.0);
    let a = cv_encoding_score(&x, &y, &default_lambdas(), 4, 2).unwrap();
    let b = cv_encoding_score(&x, &scaled, &default_lambdas(), 4, 2).unwrap();
    for (ra, rb) in a.per_unit_r.iter().zip(&b.per_unit_r) {
        assert!((ra.unwrap() - rb.unwrap()).abs() <= 1e-9);
    }
}

#[test]
fn gradient_check_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    for hidden in [vec![], vec![6], vec![8, 5], vec![7, 6, 5]] {
        for k in [2usize, 5] {
            for input in [3usize, 6] {
                let mut widths = vec![input];
                widths.extend(&hidden);
                let config = MlpConfig::new(widths, k, 0, rng.random());
                let rows = 5;
                let x: Vec<f64> = (0..rows * input)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let y: Vec<usize> = (0..rows).map(|_| rng.random_range(0..k)).collect();
                let report = gradient_check(&config, &x, &y).unwrap();
                assert!(
                    report.max_rel_error <= 1e-5,
                    "{:?} k={k}: {report:?}",
                    config.layer_widths
                );
            }
        }
    }
}

#[test]
fn separable_blobs_reach_high_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let sd = 1.0;
    let mut rows = Vec::new();
    let mut classes = Vec::new();
    for c in 0..2 {
        for _ in 0..150 {
            let mut row: Vec<f64> = (0..4)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sd * z
                })
                .collect();
            row[1] += if c == 0 { -5.0 * sd } else { 5.0 * sd };
            rows.push(row);
            classes.push(c);
        }
    }
    // direct linear classifier: threshold the separating coordinate at 0
    let oracle = rows
        .iter()
        .zip(&classes)
        .filter(|(r, &c)| (r[1] > 0.0) == (c == 1))
        .count() as f64
        / rows.len() as f64;
    assert!(oracle >= 0.99);

    let m = EmbeddingMatrix::with_default_ids(&rows, "blobs").unwrap();
    let ls = LabelSet::flat(m.ids().to_vec(), classes, 2).unwrap();
    let config = MlpConfig::new(vec![4, 16, 8], 2, 200, 3);
    let (_, report) = train(&config, &m, &ls).unwrap();
    assert!(report.final_accuracy >= 0.99, "{}", report.final_accuracy);
}

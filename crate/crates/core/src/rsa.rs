//! Alignment between two RDMs: Spearman RSA, stimulus bootstrap, the min-k
//! summary, and per-concept decomposition.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rdm::{Metric, Rdm};
use crate::stats::{self, spearman_rank_corr};

/// Default replicate count.
pub const DEFAULT_N_BOOT: usize = 1000;
/// Largest tolerated share of degenerate replicates.
pub const DEFAULT_MAX_SKIP_FRACTION: f64 = 0.10;

fn check_pair(a: &Rdm, b: &Rdm) -> Result<()> {
    if a.ids() != b.ids() {
        return Err(Error::IdMismatch);
    }
    if a.n() < 3 {
        return Err(Error::BadShape(format!(
            "alignment needs at least 3 stimuli, got {}",
            a.n()
        )));
    }
    Ok(())
}

/// Spearman correlation of the strictly-lower triangles.
pub fn rsa_align(a: &Rdm, b: &Rdm) -> Result<f64> {
    check_pair(a, b)?;
    spearman_rank_corr(&a.lower_triangle(), &b.lower_triangle())
}

/// Point estimate with a 95% percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentResult {
    pub rho: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_boot: usize,
    pub seed: u64,
    pub n_stimuli: usize,
}

impl AlignmentResult {
    pub fn overlaps(&self, other: &AlignmentResult) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }

    pub fn to_record(&self, metric: Metric) -> AlignmentRecord {
        AlignmentRecord {
            rho: self.rho,
            ci: [self.ci_low, self.ci_high],
            n_boot: self.n_boot,
            seed: self.seed,
            n_stimuli: self.n_stimuli,
            metric: metric.as_str().to_string(),
        }
    }
}

/// On-disk form of an [`AlignmentResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub rho: f64,
    pub ci: [f64; 2],
    pub n_boot: usize,
    pub seed: u64,
    pub n_stimuli: usize,
    pub metric: String,
}

impl From<&AlignmentRecord> for AlignmentResult {
    fn from(r: &AlignmentRecord) -> Self {
        AlignmentResult {
            rho: r.rho,
            ci_low: r.ci[0],
            ci_high: r.ci[1],
            n_boot: r.n_boot,
            seed: r.seed,
            n_stimuli: r.n_stimuli,
        }
    }
}

/// Replicate distribution of the bootstrap.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicates {
    /// Valid replicate correlations, in replicate order.
    pub values: Vec<f64>,
    /// Replicates whose resampled triangle was constant (or too short).
    pub skipped: usize,
}

impl Replicates {
    pub fn mean(&self) -> Option<f64> {
        stats::mean(&self.values)
    }

    /// (2.5th, 97.5th) percentiles.
    pub fn interval(&self) -> Option<(f64, f64)> {
        if self.values.is_empty() {
            return None;
        }
        let mut sorted = self.values.clone();
        sorted.sort_by(f64::total_cmp);
        Some((
            stats::percentile_sorted(&sorted, 0.025),
            stats::percentile_sorted(&sorted, 0.975),
        ))
    }
}

/// RNG for one replicate; depends only on (seed, replicate index).
fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

/// Correlation over the resampled stimuli; pairs whose two draws coincide are dropped.
pub fn resampled_rho(a: &Rdm, b: &Rdm, indices: &[usize]) -> Option<f64> {
    let m = indices.len();
    let mut xa = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    let mut xb = Vec::with_capacity(xa.capacity());
    for p in 1..m {
        let i = indices[p];
        for &j in &indices[..p] {
            if i != j {
                xa.push(a.get(i, j));
                xb.push(b.get(i, j));
            }
        }
    }
    spearman_rank_corr(&xa, &xb).ok()
}

/// Draw `n_boot` stimulus resamples and return every replicate correlation.
pub fn bootstrap_replicates(a: &Rdm, b: &Rdm, n_boot: usize, seed: u64) -> Result<Replicates> {
    check_pair(a, b)?;
    if n_boot == 0 {
        return Err(Error::InvalidArgument("n_boot must be positive".into()));
    }
    let n = a.n();
    let draws: Vec<Option<f64>> = (0..n_boot)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r);
            let indices: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            resampled_rho(a, b, &indices)
        })
        .collect();
    let skipped = draws.iter().filter(|d| d.is_none()).count();
    Ok(Replicates {
        values: draws.into_iter().flatten().collect(),
        skipped,
    })
}

fn check_skips(replicates: &Replicates, total: usize, max_skip_fraction: f64) -> Result<()> {
    let limit = (max_skip_fraction * total as f64).floor() as usize;
    if replicates.skipped > limit || replicates.values.is_empty() {
        return Err(Error::DegenerateReplicate {
            skipped: replicates.skipped,
            total,
            limit,
        });
    }
    Ok(())
}

/// 95% percentile bootstrap over stimuli, failing when more than 10% of
/// replicates are degenerate.
pub fn bootstrap_ci(a: &Rdm, b: &Rdm, n_boot: usize, seed: u64) -> Result<AlignmentResult> {
    bootstrap_ci_with(a, b, n_boot, seed, DEFAULT_MAX_SKIP_FRACTION)
}

pub fn bootstrap_ci_with(
    a: &Rdm,
    b: &Rdm,
    n_boot: usize,
    seed: u64,
    max_skip_fraction: f64,
) -> Result<AlignmentResult> {
    let rho = rsa_align(a, b)?;
    let replicates = bootstrap_replicates(a, b, n_boot, seed)?;
    check_skips(&replicates, n_boot, max_skip_fraction)?;
    let (ci_low, ci_high) = replicates.interval().expect("checked non-empty");
    Ok(AlignmentResult {
        rho,
        ci_low,
        ci_high,
        n_boot,
        seed,
        n_stimuli: a.n(),
    })
}

/// Multi-run alignment: the point estimate is the mean of the per-run
/// correlations and the interval comes from the pooled replicates.
/// Run `r` is resampled with seed `seed + r`.
pub fn bootstrap_ci_pooled(
    runs: &[(Rdm, Rdm)],
    n_boot: usize,
    seed: u64,
) -> Result<AlignmentResult> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("no runs to pool".into()));
    }
    let mut rhos = Vec::with_capacity(runs.len());
    let mut pooled = Replicates {
        values: Vec::with_capacity(n_boot * runs.len()),
        skipped: 0,
    };
    for (r, (a, b)) in runs.iter().enumerate() {
        rhos.push(rsa_align(a, b)?);
        let reps = bootstrap_replicates(a, b, n_boot, seed.wrapping_add(r as u64))?;
        pooled.values.extend(reps.values);
        pooled.skipped += reps.skipped;
    }
    let total = n_boot * runs.len();
    check_skips(&pooled, total, DEFAULT_MAX_SKIP_FRACTION)?;
    let (ci_low, ci_high) = pooled.interval().expect("checked non-empty");
    Ok(AlignmentResult {
        rho: stats::mean(&rhos).expect("non-empty"),
        ci_low,
        ci_high,
        n_boot: total,
        seed,
        n_stimuli: runs[0].0.n(),
    })
}

/// Smallest K whose interval touches or overlaps the baseline's.
pub fn min_k_overlap(
    curve: &[(usize, AlignmentResult)],
    baseline: &AlignmentResult,
) -> Result<Option<usize>> {
    if curve.is_empty() {
        return Err(Error::InvalidArgument("empty curve".into()));
    }
    let mut sorted: Vec<&(usize, AlignmentResult)> = curve.iter().collect();
    sorted.sort_by_key(|(k, _)| *k);
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidArgument("duplicate K in curve".into()));
    }
    Ok(sorted
        .into_iter()
        .find(|(_, r)| r.overlaps(baseline))
        .map(|(k, _)| *k))
}

/// For each stimulus, rank correlation between its rows in `a` and `b`
/// (self-entry excluded). Constant rows yield `None`.
pub fn per_concept_alignment(a: &Rdm, b: &Rdm) -> Result<Vec<Option<f64>>> {
    check_pair(a, b)?;
    let n = a.n();
    if n < 4 {
        return Err(Error::BadShape(format!(
            "per-concept alignment needs at least 4 stimuli, got {n}"
        )));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let row = |r: &Rdm| -> Vec<f64> {
                r.row(i)
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &v)| v)
                    .collect()
            };
            spearman_rank_corr(&row(a), &row(b)).ok()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptAdvantage {
    pub per_concept_a: Vec<Option<f64>>,
    pub per_concept_b: Vec<Option<f64>>,
    pub delta: Vec<Option<f64>>,
    pub fraction_a_higher: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMean {
    pub category: String,
    pub n_concepts: usize,
    pub mean_a: Option<f64>,
    pub mean_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    /// Sorted by category name.
    pub categories: Vec<CategoryMean>,
    pub advantage: ConceptAdvantage,
}

/// Per-category means of two per-concept score vectors plus the
/// concept-wise advantage of `a` over `b`.
pub fn aggregate_by_category(
    concepts: &[String],
    scores_a: &[Option<f64>],
    scores_b: &[Option<f64>],
    category_of: &BTreeMap<String, String>,
) -> Result<CategorySummary> {
    let n = concepts.len();
    if scores_a.len() != n || scores_b.len() != n {
        return Err(Error::BadShape(format!(
            "{n} concepts but {} / {} scores",
            scores_a.len(),
            scores_b.len()
        )));
    }

    let mut groups: BTreeMap<&str, (usize, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (i, concept) in concepts.iter().enumerate() {
        let category = category_of
            .get(concept)
            .ok_or_else(|| Error::UnknownCategory(concept.clone()))?;
        let entry = groups.entry(category.as_str()).or_default();
        entry.0 += 1;
        entry.1.extend(scores_a[i]);
        entry.2.extend(scores_b[i]);
    }
    let categories = groups
        .into_iter()
        .map(|(name, (count, a, b))| CategoryMean {
            category: name.to_string(),
            n_concepts: count,
            mean_a: stats::mean(&a),
            mean_b: stats::mean(&b),
        })
        .collect();

    let delta: Vec<Option<f64>> = scores_a
        .iter()
        .zip(scores_b)
        .map(|(a, b)| Some((*a)? - (*b)?))
        .collect();
    let valid: Vec<f64> = delta.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::InvalidArgument(
            "no concept has both scores present".into(),
        ));
    }
    let higher = valid.iter().filter(|&&d| d > 0.0).count();

    Ok(CategorySummary {
        categories,
        advantage: ConceptAdvantage {
            per_concept_a: scores_a.to_vec(),
            per_concept_b: scores_b.to_vec(),
            delta,
            fraction_a_higher: higher as f64 / valid.len() as f64,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn tri(lower: &[f64]) -> Rdm {
        let n = ((1.0 + (1.0 + 8.0 * lower.len() as f64).sqrt()) / 2.0).round() as usize;
        Rdm::from_lower_triangle(ids(n), lower, Metric::Precomputed).unwrap()
    }

    fn sample(n: usize, salt: u64) -> Rdm {
        let mut rng = ChaCha8Rng::seed_from_u64(salt);
        let lower: Vec<f64> = (0..n * (n - 1) / 2).map(|_| rng.random::<f64>()).collect();
        tri(&lower)
    }

    #[test]
    fn self_alignment_is_one() {
        let a = sample(8, 1);
        assert_eq!(rsa_align(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn squaring_preserves_ranks() {
        let a = sample(8, 2);
        let b = a.map_off_diagonal(|x| x * x).unwrap();
        assert_abs_diff_eq!(rsa_align(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn three_by_three_hand_value() {
        let a = tri(&[0.1, 0.2, 0.3]);
        let b = tri(&[0.3, 0.1, 0.2]);
        assert_abs_diff_eq!(rsa_align(&a, &b).unwrap(), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn mismatched_ids_and_constant_triangles() {
        let a = sample(4, 3);
        let b = Rdm::from_lower_triangle(
            vec!["x".into(), "c1".into(), "c2".into(), "c3".into()],
            &a.lower_triangle(),
            Metric::Precomputed,
        )
        .unwrap();
        assert!(matches!(rsa_align(&a, &b), Err(Error::IdMismatch)));
        let flat = tri(&[1.0; 6]);
        assert!(matches!(rsa_align(&a, &flat), Err(Error::ConstantVector)));
    }

    #[test]
    fn bootstrap_of_identical_rdms() {
        let a = sample(10, 4);
        let r = bootstrap_ci(&a, &a, 200, 9).unwrap();
        assert_eq!((r.rho, r.ci_low, r.ci_high), (1.0, 1.0, 1.0));
        assert_eq!(r.n_stimuli, 10);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let a = sample(12, 5);
        let b = sample(12, 6);
        let r1 = bootstrap_ci(&a, &b, 300, 42).unwrap();
        let r2 = bootstrap_ci(&a, &b, 300, 42).unwrap();
        assert_eq!(r1, r2);
        let r3 = bootstrap_ci(&a, &b, 300, 43).unwrap();
        assert_ne!(r1.ci_low, r3.ci_low);
        assert!(r1.ci_low <= r1.ci_high);
    }

    #[test]
    fn three_stimuli_mostly_degenerate() {
        // 21 of the 27 index triples repeat a stimulus and leave a constant triangle
        let a = tri(&[0.1, 0.2, 0.3]);
        let b = tri(&[0.3, 0.1, 0.2]);
        assert!(matches!(
            bootstrap_ci(&a, &b, 500, 1),
            Err(Error::DegenerateReplicate { .. })
        ));
    }

    #[test]
    fn pooled_runs() {
        let a = sample(10, 7);
        let runs = vec![(a.clone(), a.clone()), (a.clone(), a)];
        let r = bootstrap_ci_pooled(&runs, 100, 3).unwrap();
        assert_eq!((r.rho, r.ci_low, r.ci_high, r.n_boot), (1.0, 1.0, 1.0, 200));
    }

    fn interval(lo: f64, hi: f64) -> AlignmentResult {
        AlignmentResult {
            rho: (lo + hi) / 2.0,
            ci_low: lo,
            ci_high: hi,
            n_boot: 1000,
            seed: 0,
            n_stimuli: 10,
        }
    }

    #[test]
    fn min_k_examples() {
        let baseline = interval(0.5, 0.6);
        let curve = vec![
            (8, interval(0.52, 0.58)),
            (2, interval(0.30, 0.45)),
            (4, interval(0.40, 0.55)),
        ];
        assert_eq!(min_k_overlap(&curve, &baseline).unwrap(), Some(4));
        let all = vec![(16, interval(0.55, 0.7)), (4, interval(0.45, 0.5))];
        assert_eq!(min_k_overlap(&all, &baseline).unwrap(), Some(4));
        let none = vec![(2, interval(0.1, 0.2)), (4, interval(0.61, 0.7))];
        assert_eq!(min_k_overlap(&none, &baseline).unwrap(), None);
        assert!(min_k_overlap(&[], &baseline).is_err());
        let dup = vec![(2, interval(0.1, 0.2)), (2, interval(0.1, 0.2))];
        assert!(min_k_overlap(&dup, &baseline).is_err());
    }

    #[test]
    fn per_concept_identity_and_reversal() {
        let a = sample(6, 8);
        assert!(per_concept_alignment(&a, &a)
            .unwrap()
            .iter()
            .all(|r| *r == Some(1.0)));

        // reverse the order of row/column 2 only
        let n = a.n();
        let mut values = a.values().to_vec();
        for j in 0..n {
            if j != 2 {
                let v = 10.0 - a.get(2, j);
                values[2 * n + j] = v;
                values[j * n + 2] = v;
            }
        }
        let b = Rdm::new(a.ids().to_vec(), values, Metric::Precomputed).unwrap();
        let scores = per_concept_alignment(&a, &b).unwrap();
        assert_abs_diff_eq!(scores[2].unwrap(), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn per_concept_constant_row_is_missing() {
        let mut lower = vec![0.5; 6];
        lower[5] = 0.9; // (3,2)
        let a = tri(&lower);
        let b = sample(4, 9);
        let scores = per_concept_alignment(&a, &b).unwrap();
        assert_eq!(scores[0], None);
        assert_eq!(scores[1], None);
        assert!(scores[2].is_some());
    }

    #[test]
    fn category_means() {
        let concepts = ids(3);
        let map: BTreeMap<String, String> = [("c0", "x"), ("c1", "x"), ("c2", "y")]
            .iter()
            .map(|(c, k)| (c.to_string(), k.to_string()))
            .collect();
        let a = [Some(0.2), Some(0.4), Some(0.6)];
        let b = [Some(0.1), Some(0.6), Some(0.3)];
        let s = aggregate_by_category(&concepts, &a, &b, &map).unwrap();
        assert_eq!(s.categories[0].category, "x");
        assert_abs_diff_eq!(s.categories[0].mean_a.unwrap(), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(s.categories[1].mean_a.unwrap(), 0.6, epsilon = 1e-15);
        // deltas 0.1, -0.2, 0.3
        assert_abs_diff_eq!(s.advantage.fraction_a_higher, 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn single_category_is_overall_mean() {
        let concepts = ids(4);
        let map = concepts
            .iter()
            .map(|c| (c.clone(), "all".to_string()))
            .collect();
        let a = [Some(0.1), None, Some(0.5), Some(0.9)];
        let b = [Some(0.2), Some(0.2), Some(0.2), None];
        let s = aggregate_by_category(&concepts, &a, &b, &map).unwrap();
        assert_abs_diff_eq!(s.categories[0].mean_a.unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(s.advantage.delta[1], None);
        assert_abs_diff_eq!(s.advantage.fraction_a_higher, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn unknown_category() {
        let concepts = ids(2);
        let map = BTreeMap::from([("c0".to_string(), "x".to_string())]);
        let s = [Some(0.1), Some(0.2)];
        assert!(matches!(
            aggregate_by_category(&concepts, &s, &s, &map),
            Err(Error::UnknownCategory(c)) if c == "c1"
        ));
    }
}

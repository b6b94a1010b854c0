//! Rank statistics and small numeric helpers shared across modules.

use crate::error::{Error, Result};

/// 1-based ranks; tied values get the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation, or `None` when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn has_two_distinct(x: &[f64]) -> bool {
    x.iter().any(|v| *v != x[0])
}

/// Spearman rank correlation with average-rank tie handling.
pub fn spearman_rank_corr(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::BadShape(format!(
            "vectors differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::BadShape(format!(
            "rank correlation needs at least 3 values, got {}",
            x.len()
        )));
    }
    if !has_two_distinct(x) || !has_two_distinct(y) {
        return Err(Error::ConstantVector);
    }
    pearson(&average_ranks(x), &average_ranks(y)).ok_or(Error::ConstantVector)
}

/// Percentile of an ascending-sorted slice with linear interpolation
/// between closest ranks; `q` in [0, 1].
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

pub fn mean(x: &[f64]) -> Option<f64> {
    if x.is_empty() {
        None
    } else {
        Some(x.iter().sum::<f64>() / x.len() as f64)
    }
}

/// Mean of the present values.
pub fn mean_present(x: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = x.iter().flatten().copied().collect();
    mean(&present)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(
            average_ranks(&[10.0, 20.0, 20.0, 5.0]),
            vec![2.0, 3.5, 3.5, 1.0]
        );
        assert_eq!(average_ranks(&[1.0, 1.0, 1.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn identical_vectors() {
        let x = [3.0, 1.0, 4.0, 1.5, 9.0];
        assert_eq!(spearman_rank_corr(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn reversed_order() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_abs_diff_eq!(spearman_rank_corr(&x, &y).unwrap(), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn one_swap() {
        let rho = spearman_rank_corr(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_abs_diff_eq!(rho, 0.8, epsilon = 1e-15);
    }

    #[test]
    fn constant_and_short_inputs() {
        assert!(matches!(
            spearman_rank_corr(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::ConstantVector)
        ));
        assert!(matches!(
            spearman_rank_corr(&[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::BadShape(_))
        ));
    }

    #[test]
    fn percentile_interpolates() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile_sorted(&s, 0.0), 1.0);
        assert_eq!(percentile_sorted(&s, 0.5), 3.0);
        assert_eq!(percentile_sorted(&s, 0.125), 1.5);
        assert_eq!(percentile_sorted(&s, 1.0), 5.0);
        assert_eq!(percentile_sorted(&[7.0], 0.975), 7.0);
    }
}

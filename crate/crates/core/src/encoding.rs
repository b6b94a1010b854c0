//! Linear encoding models: column-centered ridge regression from features to
//! per-unit responses, scored by held-out Pearson correlation.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Rank tolerance for the unregularized system.
const RANK_TOL: f64 = 1e-12;

/// 1e-4 ... 1e4, nine log-spaced points.
pub fn default_lambdas() -> Vec<f64> {
    (-4..=4).map(|e| 10f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    /// p x u
    pub weights: DMatrix<f64>,
    pub intercepts: DVector<f64>,
    pub lambda: f64,
}

impl RidgeSolution {
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x * &self.weights;
        for mut row in out.row_iter_mut() {
            row += self.intercepts.transpose();
        }
        out
    }
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

fn centered(m: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut c = m.clone();
    for (mut col, mu) in c.column_iter_mut().zip(means.iter()) {
        col.add_scalar_mut(-mu);
    }
    c
}

/// Solve `(Xc'Xc + lambda I) W = Xc'Yc` on column-centered data.
///
/// Uses the p x p Gram system when p <= n and the equivalent n x n dual
/// system `W = Xc' (Xc Xc' + lambda I)^-1 Yc` otherwise.
pub fn ridge_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<RidgeSolution> {
    let n = x.nrows();
    if n < 2 || y.nrows() != n {
        return Err(Error::BadShape(format!(
            "ridge needs matching row counts >= 2, got {} and {}",
            n,
            y.nrows()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }
    let p = x.ncols();
    let mx = column_means(x);
    let my = column_means(y);
    let xc = centered(x, &mx);
    let yc = centered(y, &my);

    if lambda == 0.0 {
        let sv = xc.singular_values();
        let max = sv.max();
        let rank = sv.iter().filter(|&&s| s > RANK_TOL * max).count();
        if max == 0.0 || rank < p {
            return Err(Error::SingularSystem(format!(
                "centered design has rank {rank} < {p} features and lambda = 0"
            )));
        }
    }

    let weights = if p <= n {
        let mut gram = xc.tr_mul(&xc);
        for i in 0..p {
            gram[(i, i)] += lambda;
        }
        solve_spd(gram, &xc.tr_mul(&yc))?
    } else {
        let mut kernel = &xc * xc.transpose();
        for i in 0..n {
            kernel[(i, i)] += lambda;
        }
        xc.tr_mul(&solve_spd(kernel, &yc)?)
    };

    let intercepts = &my - weights.tr_mul(&mx);
    if weights
        .iter()
        .chain(intercepts.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::SingularSystem("non-finite solution".into()));
    }
    Ok(RidgeSolution {
        weights,
        intercepts,
        lambda,
    })
}

fn solve_spd(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    a.lu()
        .solve(b)
        .ok_or_else(|| Error::SingularSystem("system is not invertible".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingScore {
    /// Mean over folds of the held-out correlation; `None` when every fold
    /// had a constant held-out response (or prediction).
    pub per_unit_r: Vec<Option<f64>>,
    pub mean_r: Option<f64>,
    pub folds: usize,
    /// Selected lambda, indexed `[fold][unit]`.
    pub lambda_selected: Vec<Vec<f64>>,
    pub seed: u64,
}

fn rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    m.select_rows(idx)
}

fn column_r(pred: &DMatrix<f64>, actual: &DMatrix<f64>, unit: usize) -> Option<f64> {
    let p: Vec<f64> = pred.column(unit).iter().copied().collect();
    let a: Vec<f64> = actual.column(unit).iter().copied().collect();
    stats::pearson(&p, &a)
}

/// K-fold encoding score with nested per-unit lambda selection.
///
/// Stimuli are shuffled by `seed` and cut into contiguous folds. Inside each
/// training fold the last 20% (at least 2 stimuli) validates every lambda;
/// each unit keeps the lambda with the best validation correlation (first on
/// ties), then the model is refit on the whole training fold and scored on
/// the held-out fold.
pub fn cv_encoding_score(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambdas: &[f64],
    folds: usize,
    seed: u64,
) -> Result<EncodingScore> {
    let n = x.nrows();
    let units = y.ncols();
    if y.nrows() != n {
        return Err(Error::BadShape(format!(
            "{n} feature rows vs {} response rows",
            y.nrows()
        )));
    }
    if folds < 2 || folds > n {
        return Err(Error::InvalidArgument(format!(
            "folds must be in 2..={n}, got {folds}"
        )));
    }
    if lambdas.is_empty() || lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidArgument(
            "lambda grid must be non-empty and positive".into(),
        ));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let base = n / folds;
    let extra = n % folds;
    let mut per_fold_r: Vec<Vec<Option<f64>>> = Vec::with_capacity(folds);
    let mut lambda_selected = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        let test: Vec<usize> = order[start..start + len].to_vec();
        let train: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + len..])
            .copied()
            .collect();
        start += len;

        let n_val = ((train.len() as f64 * 0.2).ceil() as usize).max(2);
        if train.len() < n_val + 2 {
            return Err(Error::BadShape(format!(
                "training fold of {} stimuli is too small for nested selection",
                train.len()
            )));
        }
        let (inner, val) = train.split_at(train.len() - n_val);
        let (xi, yi) = (rows(x, inner), rows(y, inner));
        let (xv, yv) = (rows(x, val), rows(y, val));

        let mut best = vec![(f64::NEG_INFINITY, lambdas[0]); units];
        for &lambda in lambdas {
            let pred = ridge_fit(&xi, &yi, lambda)?.predict(&xv);
            for (u, slot) in best.iter_mut().enumerate() {
                let r = column_r(&pred, &yv, u).unwrap_or(f64::NEG_INFINITY);
                if r > slot.0 {
                    *slot = (r, lambda);
                }
            }
        }
        let chosen: Vec<f64> = best.iter().map(|b| b.1).collect();

        let (xt, yt) = (rows(x, &train), rows(y, &train));
        let (xh, yh) = (rows(x, &test), rows(y, &test));
        let mut fold_r = vec![None; units];
        let mut distinct = chosen.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        for lambda in distinct {
            let pred = ridge_fit(&xt, &yt, lambda)?.predict(&xh);
            for u in (0..units).filter(|&u| chosen[u] == lambda) {
                fold_r[u] = column_r(&pred, &yh, u);
            }
        }
        per_fold_r.push(fold_r);
        lambda_selected.push(chosen);
    }

    let per_unit_r: Vec<Option<f64>> = (0..units)
        .map(|u| {
            let vals: Vec<Option<f64>> = per_fold_r.iter().map(|f| f[u]).collect();
            stats::mean_present(&vals)
        })
        .collect();
    Ok(EncodingScore {
        mean_r: stats::mean_present(&per_unit_r),
        per_unit_r,
        folds,
        lambda_selected,
        seed,
    })
}

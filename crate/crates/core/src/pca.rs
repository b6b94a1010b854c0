//! Principal component bases fit by SVD of the centered data matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Singular values below this fraction of the largest are treated as zero.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Mean plus orthonormal principal axes, ordered by descending singular value.
///
/// Each axis is sign-normalized so that its largest-magnitude loading is
/// positive (first such index on exact ties).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
}

impl PcaBasis {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    /// Score of one row on component `c`.
    pub fn score(&self, row: &[f64], c: usize) -> f64 {
        self.components[c]
            .iter()
            .zip(row.iter().zip(&self.mean))
            .map(|(w, (x, mu))| w * (x - mu))
            .sum()
    }

    /// Scores of every row of `m` on component `c`.
    pub fn scores(&self, m: &EmbeddingMatrix, c: usize) -> Vec<f64> {
        m.rows().map(|row| self.score(row, c)).collect()
    }

    /// Row-major n x k matrix of scores on the first `k` components.
    pub fn project(&self, m: &EmbeddingMatrix, k: usize) -> Result<Vec<f64>> {
        if k > self.n_components() {
            return Err(Error::KTooLarge {
                k,
                available: self.n_components(),
            });
        }
        self.check_features(m)?;
        let mut out = Vec::with_capacity(m.n_rows() * k);
        for row in m.rows() {
            out.extend((0..k).map(|c| self.score(row, c)));
        }
        Ok(out)
    }

    pub(crate) fn check_features(&self, m: &EmbeddingMatrix) -> Result<()> {
        if m.n_cols() != self.n_features() {
            return Err(Error::BadShape(format!(
                "basis has {} features, matrix has {}",
                self.n_features(),
                m.n_cols()
            )));
        }
        Ok(())
    }
}

struct Decomposition {
    mean: Vec<f64>,
    // (singular value, right singular vector), descending
    axes: Vec<(f64, Vec<f64>)>,
}

fn decompose(m: &EmbeddingMatrix) -> Result<Decomposition> {
    let n = m.n_rows();
    let p = m.n_cols();
    if n < 2 {
        return Err(Error::BadShape(format!(
            "PCA needs at least 2 stimuli, got {n}"
        )));
    }
    let mut mean = vec![0.0; p];
    for row in m.rows() {
        for (acc, x) in mean.iter_mut().zip(row) {
            *acc += x;
        }
    }
    for v in &mut mean {
        *v /= n as f64;
    }
    let centered = DMatrix::from_fn(n, p, |i, j| m.get(i, j) - mean[j]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");

    let mut axes: Vec<(f64, Vec<f64>)> = svd
        .singular_values
        .iter()
        .enumerate()
        .map(|(r, &s)| (s, v_t.row(r).iter().copied().collect()))
        .collect();
    axes.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (_, v) in &mut axes {
        fix_sign(v);
    }
    Ok(Decomposition { mean, axes })
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn numerical_rank(singular_values: &[f64]) -> usize {
    let max = singular_values.first().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return 0;
    }
    singular_values
        .iter()
        .take_while(|&&s| s >= DEGENERACY_TOL * max)
        .count()
}

/// Fit the top `n_components` principal axes of `m`.
pub fn fit_pca(m: &EmbeddingMatrix, n_components: usize) -> Result<PcaBasis> {
    let limit = m.n_rows().saturating_sub(1).min(m.n_cols());
    if n_components == 0 || n_components > limit {
        return Err(Error::InvalidArgument(format!(
            "n_components must be in 1..={limit} for a {}x{} matrix, got {n_components}",
            m.n_rows(),
            m.n_cols()
        )));
    }
    let dec = decompose(m)?;
    let svals: Vec<f64> = dec.axes.iter().map(|a| a.0).collect();
    let rank = numerical_rank(&svals);
    if rank < n_components {
        return Err(Error::InsufficientVariance(format!(
            "requested {n_components} components but only {rank} singular values exceed \
             {DEGENERACY_TOL:e} of the largest"
        )));
    }
    Ok(basis_from(dec, n_components))
}

/// Fit every non-degenerate axis of `m` (as many components as its numerical rank).
pub fn fit_pca_full(m: &EmbeddingMatrix) -> Result<PcaBasis> {
    let dec = decompose(m)?;
    let svals: Vec<f64> = dec.axes.iter().map(|a| a.0).collect();
    let rank = numerical_rank(&svals).min(m.n_rows() - 1);
    if rank == 0 {
        return Err(Error::InsufficientVariance(
            "centered matrix is zero".into(),
        ));
    }
    Ok(basis_from(dec, rank))
}

fn basis_from(dec: Decomposition, k: usize) -> PcaBasis {
    let (singular_values, components) = dec.axes.into_iter().take(k).unzip();
    PcaBasis {
        mean: dec.mean,
        components,
        singular_values,
    }
}

/// PC1/PC2 scores of `m` under its own basis, as a two-column matrix.
pub fn project_2d(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    if m.n_rows() < 3 {
        return Err(Error::BadShape(format!(
            "2-D projection needs at least 3 stimuli, got {}",
            m.n_rows()
        )));
    }
    if m.n_cols() < 2 {
        return Err(Error::InsufficientVariance(
            "a single feature has no second component".into(),
        ));
    }
    let basis = fit_pca(m, 2)?;
    let scores = basis.project(m, 2)?;
    EmbeddingMatrix::new(
        m.ids().to_vec(),
        2,
        scores,
        format!("pc1-pc2 of {}", m.source_tag()),
    )
}

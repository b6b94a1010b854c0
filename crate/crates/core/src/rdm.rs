//! Representational dissimilarity matrices.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, EmbeddingMatrix, Sidecar, Width};
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// 1 - Pearson correlation across features.
    #[default]
    Correlation,
    Euclidean,
    /// 1 - cosine similarity.
    Cosine,
    /// Supplied directly (ground-truth or externally computed RDMs).
    Precomputed,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Correlation => "correlation",
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
            Metric::Precomputed => "precomputed",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correlation" => Ok(Metric::Correlation),
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            "precomputed" => Ok(Metric::Precomputed),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

/// Symmetric, zero-diagonal, non-negative stimulus x stimulus matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Rdm {
    ids: Vec<String>,
    values: Vec<f64>,
    metric: Metric,
}

impl Rdm {
    /// Validate and wrap a row-major n x n matrix.
    pub fn new(ids: Vec<String>, values: Vec<f64>, metric: Metric) -> Result<Self> {
        let n = ids.len();
        if values.len() != n * n {
            return Err(Error::BadShape(format!(
                "{} values for a {n}x{n} RDM",
                values.len()
            )));
        }
        data::check_unique(&ids)?;
        for i in 0..n {
            for j in 0..n {
                let v = values[i * n + j];
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
                if v < 0.0 {
                    return Err(Error::BadShape(format!(
                        "negative dissimilarity at ({i}, {j})"
                    )));
                }
                if metric == Metric::Correlation && v > 2.0 + SYMMETRY_TOL {
                    return Err(Error::BadShape(format!(
                        "correlation distance {v} exceeds 2 at ({i}, {j})"
                    )));
                }
            }
            if values[i * n + i] != 0.0 {
                return Err(Error::BadShape(format!("non-zero diagonal at {i}")));
            }
            for j in 0..i {
                if (values[i * n + j] - values[j * n + i]).abs() > SYMMETRY_TOL {
                    return Err(Error::BadShape(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            ids,
            values,
            metric,
        })
    }

    /// Build from the strictly-lower triangle in row-major order
    /// ((1,0), (2,0), (2,1), (3,0), ...).
    pub fn from_lower_triangle(ids: Vec<String>, lower: &[f64], metric: Metric) -> Result<Self> {
        let n = ids.len();
        if lower.len() != n * n.saturating_sub(1) / 2 {
            return Err(Error::BadShape(format!(
                "{} triangle entries for {n} stimuli",
                lower.len()
            )));
        }
        let mut values = vec![0.0; n * n];
        let mut k = 0;
        for i in 1..n {
            for j in 0..i {
                values[i * n + j] = lower[k];
                values[j * n + i] = lower[k];
                k += 1;
            }
        }
        Self::new(ids, values, metric)
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.values[i * n..(i + 1) * n]
    }

    /// Strictly-lower triangle, row-major.
    pub fn lower_triangle(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 1..n {
            out.extend_from_slice(&self.values[i * n..i * n + i]);
        }
        out
    }

    /// Sub-matrix on distinct `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let n = self.n();
        let ids = indices.iter().map(|&i| self.ids[i].clone()).collect();
        let mut values = Vec::with_capacity(indices.len() * indices.len());
        for &i in indices {
            values.extend(indices.iter().map(|&j| self.values[i * n + j]));
        }
        Self::new(ids, values, self.metric)
    }

    /// Same matrix, entries remapped by `f` off the diagonal.
    pub fn map_off_diagonal(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let n = self.n();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| if k / n == k % n { 0.0 } else { f(v) })
            .collect();
        Self::new(self.ids.clone(), values, Metric::Precomputed)
    }
}

/// Restrict both RDMs to their shared stimuli, in `a`'s order.
pub fn align_rdms(a: &Rdm, b: &Rdm) -> Result<(Rdm, Rdm)> {
    if a.ids == b.ids {
        return Ok((a.clone(), b.clone()));
    }
    let (ia, ib) = data::shared_indices(&a.ids, &b.ids)?;
    Ok((a.select(&ia)?, b.select(&ib)?))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rows prepared so that the dissimilarity is a function of one dot product
/// (correlation, cosine) or of the raw rows (euclidean).
fn prepared_rows(m: &EmbeddingMatrix, metric: Metric) -> Result<Vec<Vec<f64>>> {
    let p = m.n_cols();
    m.rows()
        .zip(m.ids())
        .map(|(row, id)| match metric {
            Metric::Euclidean => Ok(row.to_vec()),
            Metric::Correlation => {
                if p < 2 {
                    return Err(Error::BadShape(
                        "correlation distance needs at least 2 features".into(),
                    ));
                }
                let mu = row.iter().sum::<f64>() / p as f64;
                let centered: Vec<f64> = row.iter().map(|x| x - mu).collect();
                let norm = dot(&centered, &centered).sqrt();
                if row.iter().all(|x| *x == row[0]) || norm == 0.0 {
                    return Err(Error::DegenerateRow {
                        id: id.clone(),
                        reason: "zero variance",
                    });
                }
                Ok(centered.into_iter().map(|x| x / norm).collect())
            }
            Metric::Cosine => {
                let norm = dot(row, row).sqrt();
                if norm == 0.0 {
                    return Err(Error::DegenerateRow {
                        id: id.clone(),
                        reason: "zero norm",
                    });
                }
                Ok(row.iter().map(|x| x / norm).collect())
            }
            Metric::Precomputed => Err(Error::InvalidArgument(
                "precomputed is not a feature-space metric".into(),
            )),
        })
        .collect()
}

fn pair_dissimilarity(metric: Metric, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        Metric::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        Metric::Correlation => (1.0 - dot(a, b)).clamp(0.0, 2.0),
        Metric::Cosine => (1.0 - dot(a, b)).clamp(0.0, 2.0),
        Metric::Precomputed => unreachable!("rejected in prepared_rows"),
    }
}

/// Pairwise dissimilarities between the rows of `m`.
pub fn compute_rdm(m: &EmbeddingMatrix, metric: Metric) -> Result<Rdm> {
    let n = m.n_rows();
    let rows = prepared_rows(m, metric)?;
    // each entry depends only on its own pair, so the result is schedule-independent
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| {
                    if m.row(i) == m.row(j) {
                        0.0
                    } else {
                        pair_dissimilarity(metric, &rows[i], &rows[j])
                    }
                })
                .collect()
        })
        .collect();
    let mut values = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Rdm::new(m.ids().to_vec(), values, metric)
}

/// Mean silhouette of `m`'s rows under `classes`, with euclidean distances.
///
/// Stimuli alone in their class score 0. Distances are computed on the fly,
/// so memory stays linear in the number of stimuli.
pub fn silhouette_score(m: &EmbeddingMatrix, classes: &[usize]) -> Result<f64> {
    let n = m.n_rows();
    if classes.len() != n {
        return Err(Error::BadShape(format!(
            "{} labels for {n} rows",
            classes.len()
        )));
    }
    let k = classes.iter().max().map_or(0, |c| c + 1);
    let mut sizes = vec![0usize; k];
    for &c in classes {
        sizes[c] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::InvalidArgument(
            "silhouette needs at least two non-empty classes".into(),
        ));
    }
    let per_point: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = classes[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[classes[j]] += pair_dissimilarity(Metric::Euclidean, m.row(i), m.row(j));
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect();
    Ok(per_point.iter().sum::<f64>() / n as f64)
}

pub fn write_rdm(rdm: &Rdm, path: impl AsRef<Path>, width: Width) -> Result<()> {
    let sidecar = Sidecar {
        ids: rdm.ids.clone(),
        source_tag: "rdm".into(),
        metric_tag: Some(rdm.metric.as_str().into()),
    };
    let n = rdm.n();
    data::write_with_sidecar(path.as_ref(), n, n, &rdm.values, width, &sidecar)
}

pub fn read_rdm(path: impl AsRef<Path>) -> Result<Rdm> {
    let (rows, cols, values, sidecar) = data::read_with_sidecar(path.as_ref())?;
    if rows != cols {
        return Err(Error::BadShape(format!("RDM file is {rows}x{cols}")));
    }
    let metric = match sidecar.metric_tag.as_deref() {
        Some(tag) => tag.parse()?,
        None => {
            return Err(Error::Schema(
                "RDM sidecar lacks a metric_tag; is this an embedding?".into(),
            ))
        }
    };
    Rdm::new(sidecar.ids, values, metric)
}

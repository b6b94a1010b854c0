//! Top-k principal component reconstruction probes.
//!
//! A representation is rebuilt from its own leading `k` principal axes and
//! its alignment to a target RDM is traced as `k` grows.

use serde::{Deserialize, Serialize};

use crate::data::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::pca::{fit_pca_full, PcaBasis};
use crate::rdm::{align_rdms, compute_rdm, Metric, Rdm};
use crate::rsa::{bootstrap_ci, AlignmentResult};

/// `mean + sum_{c < k} score_c * component_c` for every row of `m`.
pub fn reconstruct_topk(
    m: &EmbeddingMatrix,
    basis: &PcaBasis,
    k: usize,
) -> Result<EmbeddingMatrix> {
    if k > basis.n_components() {
        return Err(Error::KTooLarge {
            k,
            available: basis.n_components(),
        });
    }
    let scores = basis.project(m, k)?;
    let p = m.n_cols();
    let mut data = Vec::with_capacity(m.n_rows() * p);
    for i in 0..m.n_rows() {
        let mut row = basis.mean.clone();
        for (c, component) in basis.components.iter().take(k).enumerate() {
            let s = scores[i * k + c];
            for (x, w) in row.iter_mut().zip(component) {
                *x += s * w;
            }
        }
        data.extend(row);
    }
    EmbeddingMatrix::new(
        m.ids().to_vec(),
        p,
        data,
        format!("top-{k} reconstruction of {}", m.source_tag()),
    )
}

/// Powers of two below `rank`, then `rank` itself.
pub fn default_ks(rank: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = std::iter::successors(Some(1usize), |k| k.checked_mul(2))
        .take_while(|&k| k < rank)
        .collect();
    ks.push(rank);
    ks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub rho: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionCurve {
    pub ks: Vec<usize>,
    pub alignments: Vec<AlignmentResult>,
    pub reference: String,
    /// Rank of the probed matrix (its largest valid k).
    pub full_rank: usize,
}

impl ReconstructionCurve {
    pub fn points(&self) -> Vec<CurvePoint> {
        self.ks
            .iter()
            .zip(&self.alignments)
            .map(|(&k, a)| CurvePoint {
                k,
                rho: a.rho,
                ci_low: a.ci_low,
                ci_high: a.ci_high,
            })
            .collect()
    }
}

/// Alignment of top-k reconstructions of `m` to `target` for each k in `ks`
/// (defaults to [`default_ks`] when `None`). The basis is refit on `m`, and
/// every point reuses `seed` so all k share the same bootstrap resamples.
pub fn alignment_vs_k(
    m: &EmbeddingMatrix,
    target: &Rdm,
    ks: Option<&[usize]>,
    metric: Metric,
    n_boot: usize,
    seed: u64,
    reference: impl Into<String>,
) -> Result<ReconstructionCurve> {
    let basis = fit_pca_full(m)?;
    let full_rank = basis.n_components();
    let ks = match ks {
        Some(ks) => ks.to_vec(),
        None => default_ks(full_rank),
    };
    if ks.is_empty() || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "ks must be non-empty and strictly ascending".into(),
        ));
    }
    let alignments = ks
        .iter()
        .map(|&k| {
            let recon = reconstruct_topk(m, &basis, k)?;
            let rdm = compute_rdm(&recon, metric)?;
            let (a, b) = align_rdms(&rdm, target)?;
            bootstrap_ci(&a, &b, n_boot, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReconstructionCurve {
        ks,
        alignments,
        reference: reference.into(),
        full_rank,
    })
}

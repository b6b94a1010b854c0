//! Planted binary hierarchies: synthetic data with a known tree-induced
//! (ultrametric) ground-truth RDM.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::labeler::LabelSet;
use crate::rdm::{Metric, Rdm};

#[derive(Debug, Clone)]
pub struct PlantedHierarchy {
    pub data: EmbeddingMatrix,
    /// Each point's leaf mean (noise-free copy of `data`).
    pub leaf_means: EmbeddingMatrix,
    pub tree_paths: Vec<String>,
    pub depth: usize,
    /// Unit direction carrying level `l`'s offset.
    pub directions: Vec<Vec<f64>>,
}

impl PlantedHierarchy {
    /// Leaf labels (`2^depth` classes); `None` for depth 0.
    pub fn leaf_labels(&self) -> Option<LabelSet> {
        if self.depth == 0 {
            return None;
        }
        LabelSet::from_paths(self.data.ids().to_vec(), self.tree_paths.clone()).ok()
    }

    /// `d(i, j) = (depth - shared path prefix) / depth`; all zeros at depth 0.
    pub fn ground_truth_rdm(&self) -> Result<Rdm> {
        let all: Vec<usize> = (0..self.tree_paths.len()).collect();
        self.ground_truth_rdm_for(&all)
    }

    /// Ground-truth RDM restricted to the points at `indices`, in that order.
    pub fn ground_truth_rdm_for(&self, indices: &[usize]) -> Result<Rdm> {
        let n = indices.len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.tree_paths.len()) {
            return Err(Error::BadShape(format!(
                "index {bad} out of range for {} points",
                self.tree_paths.len()
            )));
        }
        let mut values = vec![0.0; n * n];
        if self.depth > 0 {
            for a in 0..n {
                for b in 0..a {
                    let (pa, pb) = (&self.tree_paths[indices[a]], &self.tree_paths[indices[b]]);
                    let shared = pa
                        .bytes()
                        .zip(pb.bytes())
                        .take_while(|(x, y)| x == y)
                        .count();
                    let d = (self.depth - shared) as f64 / self.depth as f64;
                    values[a * n + b] = d;
                    values[b * n + a] = d;
                }
            }
        }
        let ids = indices
            .iter()
            .map(|&i| self.data.ids()[i].clone())
            .collect();
        Rdm::new(ids, values, Metric::Precomputed)
    }
}

/// Orthonormalized Gaussian directions (classical Gram-Schmidt, re-drawn on
/// the measure-zero event of a dependent draw).
fn random_orthonormal(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Points grouped by leaf (leaf index ascending, `per_leaf` each). Level `l`
/// (1-based) bit `b` shifts the leaf mean by `(2b - 1) * 2^(depth - l)` along
/// its own direction; each point adds isotropic noise with sd `noise_sd`.
pub fn generate_hierarchical_data(
    depth: usize,
    per_leaf: usize,
    dim: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<PlantedHierarchy> {
    if per_leaf == 0 || dim == 0 || dim < depth || depth >= 32 {
        return Err(Error::BadShape(format!(
            "need per_leaf >= 1 and 1 <= dim >= depth < 32, got depth {depth}, \
             per_leaf {per_leaf}, dim {dim}"
        )));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::BadShape(format!(
            "noise_sd must be >= 0, got {noise_sd}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let directions = random_orthonormal(depth, dim, &mut rng);
    let n_leaves = 1usize << depth;

    let mut means = Vec::with_capacity(n_leaves * per_leaf * dim);
    let mut data = Vec::with_capacity(n_leaves * per_leaf * dim);
    let mut tree_paths = Vec::with_capacity(n_leaves * per_leaf);
    for leaf in 0..n_leaves {
        let path: String = (0..depth)
            .map(|l| {
                if (leaf >> (depth - 1 - l)) & 1 == 1 {
                    '1'
                } else {
                    '0'
                }
            })
            .collect();
        let mut mean = vec![0.0; dim];
        for (l, bit) in path.bytes().enumerate() {
            let sign = if bit == b'1' { 1.0 } else { -1.0 };
            let scale = sign * (1u64 << (depth - 1 - l)) as f64;
            mean.iter_mut()
                .zip(&directions[l])
                .for_each(|(m, u)| *m += scale * u);
        }
        for _ in 0..per_leaf {
            means.extend_from_slice(&mean);
            data.extend(mean.iter().map(|m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + noise_sd * z
            }));
            tree_paths.push(path.clone());
        }
    }

    let ids: Vec<String> = (0..tree_paths.len()).map(|i| format!("p{i:06}")).collect();
    Ok(PlantedHierarchy {
        data: EmbeddingMatrix::new(ids.clone(), dim, data, "planted hierarchy")?,
        leaf_means: EmbeddingMatrix::new(ids, dim, means, "planted hierarchy leaf means")?,
        tree_paths,
        depth,
        directions,
    })
}

//! Coarse labels from recursive balanced median splits along principal axes.
//!
//! Level `l` (1-based) halves every current partition. In [`SplitMode::Global`]
//! the split key is the stimulus score on the global PC `l`; in
//! [`SplitMode::Local`] PCA is refit inside the partition and its PC1 is used.
//! Members are sorted by (score, stimulus index); the first `floor(size / 2)`
//! receive bit `0`, the rest bit `1`. After `depth` levels every stimulus
//! carries a `depth`-bit path, read as a big-endian binary class index.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{self, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::pca::{fit_pca, PcaBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    #[default]
    Global,
    Local,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(SplitMode::Global),
            "local" => Ok(SplitMode::Local),
            other => Err(Error::InvalidArgument(format!(
                "split mode must be global or local, got {other:?}"
            ))),
        }
    }
}

/// Per-stimulus class assignment.
///
/// Sets produced by splitting carry bit paths and a depth; externally
/// produced flat sets (e.g. 1000 fine-grained classes) carry only indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    ids: Vec<String>,
    paths: Option<Vec<String>>,
    classes: Vec<usize>,
    depth: Option<usize>,
    n_classes: usize,
}

impl LabelSet {
    /// Hierarchical set from bit paths; class indices are derived from the paths.
    pub fn from_paths(ids: Vec<String>, paths: Vec<String>) -> Result<Self> {
        let depth = paths.first().map_or(0, String::len);
        if depth == 0 || depth >= usize::BITS as usize {
            return Err(Error::Schema(format!("unsupported path depth {depth}")));
        }
        let classes = paths
            .iter()
            .zip(&ids)
            .map(|(p, id)| parse_path(p, depth, id))
            .collect::<Result<Vec<_>>>()?;
        Self::validated(ids, Some(paths), classes, Some(depth), 1 << depth)
    }

    /// Flat set with no hierarchy.
    pub fn flat(ids: Vec<String>, classes: Vec<usize>, n_classes: usize) -> Result<Self> {
        Self::validated(ids, None, classes, None, n_classes)
    }

    fn validated(
        ids: Vec<String>,
        paths: Option<Vec<String>>,
        classes: Vec<usize>,
        depth: Option<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Schema("label set is empty".into()));
        }
        if ids.len() != classes.len() {
            return Err(Error::Schema(format!(
                "{} ids but {} class indices",
                ids.len(),
                classes.len()
            )));
        }
        if n_classes == 0 {
            return Err(Error::Schema("n_classes must be positive".into()));
        }
        data::check_unique(&ids).map_err(|e| Error::Schema(e.to_string()))?;
        for (id, &class) in ids.iter().zip(&classes) {
            if class >= n_classes {
                return Err(Error::ClassIndexOutOfRange {
                    id: id.clone(),
                    class,
                    reason: format!("n_classes is {n_classes}"),
                });
            }
        }
        Ok(Self {
            ids,
            paths,
            classes,
            depth,
            n_classes,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn paths(&self) -> Option<&[String]> {
        self.paths.as_deref()
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn depth(&self) -> Option<usize> {
        self.depth
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Supervisory information per stimulus: log2(K) bits.
    pub fn bits_per_stimulus(&self) -> f64 {
        (self.n_classes as f64).log2()
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_classes];
        for &c in &self.classes {
            sizes[c] += 1;
        }
        sizes
    }

    /// Keep the first `depth` bits of every path.
    pub fn truncate(&self, depth: usize) -> Result<Self> {
        let paths = self
            .paths
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("flat label set has no paths".into()))?;
        let full = self.depth.unwrap_or(0);
        if depth == 0 || depth > full {
            return Err(Error::InvalidArgument(format!(
                "truncation depth must be in 1..={full}, got {depth}"
            )));
        }
        Self::from_paths(
            self.ids.clone(),
            paths.iter().map(|p| p[..depth].to_string()).collect(),
        )
    }

    /// Class index for each id of `ids`, in that order.
    pub fn classes_for(&self, ids: &[String]) -> Result<Vec<usize>> {
        let lookup: HashMap<&str, usize> = self
            .ids
            .iter()
            .zip(&self.classes)
            .map(|(id, &c)| (id.as_str(), c))
            .collect();
        ids.iter()
            .map(|id| {
                lookup
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Schema(format!("no label for stimulus {id:?}")))
            })
            .collect()
    }
}

fn parse_path(path: &str, depth: usize, id: &str) -> Result<usize> {
    if path.len() != depth {
        return Err(Error::Schema(format!(
            "path {path:?} for {id:?} has length {}, expected {depth}",
            path.len()
        )));
    }
    path.bytes().try_fold(0usize, |acc, b| match b {
        b'0' => Ok(acc << 1),
        b'1' => Ok((acc << 1) | 1),
        _ => Err(Error::Schema(format!(
            "path {path:?} for {id:?} contains a character other than 0/1"
        ))),
    })
}

/// Split `m` into `2^depth` balanced classes.
pub fn recursive_median_partition(
    m: &EmbeddingMatrix,
    basis: &PcaBasis,
    depth: usize,
    mode: SplitMode,
) -> Result<LabelSet> {
    let n = m.n_rows();
    if depth == 0 {
        return Err(Error::InvalidArgument("depth must be positive".into()));
    }
    let needed = u32::try_from(depth)
        .ok()
        .and_then(|d| 1usize.checked_shl(d))
        .unwrap_or(usize::MAX);
    if needed > n {
        return Err(Error::TooDeep {
            depth,
            needed,
            available: n,
        });
    }

    let global_scores = match mode {
        SplitMode::Global => {
            if depth > basis.n_components() {
                return Err(Error::InvalidArgument(format!(
                    "depth {depth} exceeds the basis' {} components",
                    basis.n_components()
                )));
            }
            basis.check_features(m)?;
            (0..depth).map(|c| basis.scores(m, c)).collect()
        }
        SplitMode::Local => Vec::new(),
    };

    let mut paths = vec![String::with_capacity(depth); n];
    let mut groups: Vec<Vec<usize>> = vec![(0..n).collect()];
    for level in 0..depth {
        let mut next = Vec::with_capacity(groups.len() * 2);
        for group in &groups {
            let keys = match mode {
                SplitMode::Global => group.iter().map(|&i| global_scores[level][i]).collect(),
                SplitMode::Local => local_pc1_scores(m, group)?,
            };
            let (low, high) = balanced_split(group, &keys);
            for &i in &low {
                paths[i].push('0');
            }
            for &i in &high {
                paths[i].push('1');
            }
            next.push(low);
            next.push(high);
        }
        groups = next;
    }
    LabelSet::from_paths(m.ids().to_vec(), paths)
}

fn local_pc1_scores(m: &EmbeddingMatrix, group: &[usize]) -> Result<Vec<f64>> {
    let sub = m.select_rows(group)?;
    let basis = fit_pca(&sub, 1).map_err(|e| match e {
        Error::InsufficientVariance(msg) => {
            Error::InsufficientVariance(format!("partition of {} stimuli: {msg}", group.len()))
        }
        other => other,
    })?;
    Ok(basis.scores(&sub, 0))
}

/// Sort members by (key, index); the first half goes low.
fn balanced_split(members: &[usize], keys: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<(f64, usize)> = keys.iter().copied().zip(members.iter().copied()).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let half = order.len() / 2;
    let mut low: Vec<usize> = order[..half].iter().map(|&(_, i)| i).collect();
    let mut high: Vec<usize> = order[half..].iter().map(|&(_, i)| i).collect();
    low.sort_unstable();
    high.sort_unstable();
    (low, high)
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelFile {
    depth: Option<usize>,
    n_classes: usize,
    labels: Vec<LabelEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelEntry {
    id: String,
    #[serde(default)]
    path: Option<String>,
    class: usize,
}

pub fn labels_to_json(ls: &LabelSet) -> Result<String> {
    let file = LabelFile {
        depth: ls.depth,
        n_classes: ls.n_classes,
        labels: ls
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| LabelEntry {
                id: id.clone(),
                path: ls.paths.as_ref().map(|p| p[i].clone()),
                class: ls.classes[i],
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

pub fn labels_from_json(text: &str) -> Result<LabelSet> {
    let file: LabelFile =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("label file: {e}")))?;
    let ids: Vec<String> = file.labels.iter().map(|l| l.id.clone()).collect();
    let classes: Vec<usize> = file.labels.iter().map(|l| l.class).collect();

    let Some(depth) = file.depth else {
        if file.labels.iter().any(|l| l.path.is_some()) {
            return Err(Error::Schema("paths given without a depth".into()));
        }
        return LabelSet::flat(ids, classes, file.n_classes);
    };

    if depth == 0 || depth >= usize::BITS as usize || file.n_classes != 1 << depth {
        return Err(Error::Schema(format!(
            "depth {depth} is inconsistent with n_classes {}",
            file.n_classes
        )));
    }
    let mut paths = Vec::with_capacity(file.labels.len());
    for entry in &file.labels {
        let path = entry
            .path
            .clone()
            .ok_or_else(|| Error::Schema(format!("missing path for {:?}", entry.id)))?;
        let encoded = parse_path(&path, depth, &entry.id)?;
        if encoded != entry.class {
            return Err(Error::ClassIndexOutOfRange {
                id: entry.id.clone(),
                class: entry.class,
                reason: format!("path {path:?} encodes {encoded}"),
            });
        }
        paths.push(path);
    }
    LabelSet::from_paths(ids, paths)
}

pub fn write_labels(ls: &LabelSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, labels_to_json(ls)?).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    labels_from_json(&text)
}

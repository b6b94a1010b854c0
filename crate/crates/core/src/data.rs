//! Embedding matrices and the EMB1 container.
//!
//! Layout (little-endian):
//! - magic: `b"EMB1"`
//! - n_rows: u32
//! - n_cols: u32
//! - dtype: u8 (1 = f32, 2 = f64)
//! - payload: n_rows * n_cols values, row-major
//!
//! Stimulus ids and provenance live in a JSON sidecar at `<path>.meta.json`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const HEADER_LEN: usize = 13;

/// On-disk float width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Width {
    F32,
    F64,
}

impl Width {
    pub fn dtype_code(self) -> u8 {
        match self {
            Width::F32 => 1,
            Width::F64 => 2,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Width::F32 => 4,
            Width::F64 => 8,
        }
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            32 => Ok(Width::F32),
            64 => Ok(Width::F64),
            other => Err(Error::InvalidArgument(format!(
                "width must be 32 or 64, got {other}"
            ))),
        }
    }
}

/// Stimuli x features matrix with one identifier per row.
///
/// Entries are stored row-major in 64-bit precision. The constructor enforces
/// the invariants (unique ids, finite entries, non-empty shape), so every
/// value of this type is valid.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    n_cols: usize,
    data: Vec<f64>,
    source_tag: String,
}

impl EmbeddingMatrix {
    pub fn new(
        ids: Vec<String>,
        n_cols: usize,
        data: Vec<f64>,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        let n_rows = ids.len();
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::BadShape(format!(
                "embedding must be at least 1x1, got {n_rows}x{n_cols}"
            )));
        }
        if data.len() != n_rows * n_cols {
            return Err(Error::BadShape(format!(
                "{} values do not fill a {n_rows}x{n_cols} matrix",
                data.len()
            )));
        }
        check_unique(&ids)?;
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / n_cols,
                col: pos % n_cols,
            });
        }
        Ok(Self {
            ids,
            n_cols,
            data,
            source_tag: source_tag.into(),
        })
    }

    /// Build from nested rows; all rows must share one length.
    pub fn from_rows(
        ids: Vec<String>,
        rows: &[Vec<f64>],
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::BadShape("ragged rows".into()));
        }
        if ids.len() != rows.len() {
            return Err(Error::BadShape(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.len()
            )));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(ids, n_cols, data, source_tag)
    }

    /// Rows named `s0`, `s1`, ...; handy for synthetic data and tests.
    pub fn with_default_ids(rows: &[Vec<f64>], source_tag: impl Into<String>) -> Result<Self> {
        let ids = (0..rows.len()).map(|i| format!("s{i}")).collect();
        Self::from_rows(ids, rows, source_tag)
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    /// Same ids and provenance, new values of the same shape.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.ids.clone(), self.n_cols, data, self.source_tag.clone())
    }

    pub fn with_source_tag(mut self, tag: impl Into<String>) -> Self {
        self.source_tag = tag.into();
        self
    }

    /// Rows at `indices`, in that order. Indices must be distinct.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let ids = indices.iter().map(|&i| self.ids[i].clone()).collect();
        let mut data = Vec::with_capacity(indices.len() * self.n_cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self::new(ids, self.n_cols, data, self.source_tag.clone())
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n_rows(), self.n_cols, &self.data)
    }
}

pub(crate) fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

/// JSON sidecar stored next to every EMB1 file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub ids: Vec<String>,
    #[serde(default)]
    pub source_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_tag: Option<String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Encode a row-major matrix as an EMB1 byte buffer.
pub fn encode_emb1(n_rows: usize, n_cols: usize, data: &[f64], width: Width) -> Result<Vec<u8>> {
    let rows =
        u32::try_from(n_rows).map_err(|_| Error::BadShape(format!("{n_rows} rows exceed u32")))?;
    let cols = u32::try_from(n_cols)
        .map_err(|_| Error::BadShape(format!("{n_cols} columns exceed u32")))?;
    debug_assert_eq!(data.len(), n_rows * n_cols);

    let mut buf = Vec::with_capacity(HEADER_LEN + data.len() * width.bytes());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    buf.push(width.dtype_code());
    match width {
        Width::F32 => {
            for &v in data {
                // `as` rounds to nearest, ties to even.
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Width::F64 => {
            for &v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(buf)
}

/// Decoded EMB1 payload: (n_rows, n_cols, row-major values widened to f64).
pub fn decode_emb1(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let n_rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let n_cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let width = match bytes[12] {
        1 => Width::F32,
        2 => Width::F64,
        other => return Err(Error::BadDtype(other)),
    };

    let payload = &bytes[HEADER_LEN..];
    let expected = n_rows
        .checked_mul(n_cols)
        .and_then(|n| n.checked_mul(width.bytes()))
        .ok_or_else(|| Error::BadShape(format!("{n_rows}x{n_cols} overflows")))?;
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected: HEADER_LEN + expected,
            found: bytes.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::TrailingBytes(payload.len() - expected));
    }

    let data: Vec<f64> = match width {
        Width::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Width::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: pos / n_cols.max(1),
            col: pos % n_cols.max(1),
        });
    }
    Ok((n_rows, n_cols, data))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_with_sidecar(
    path: &Path,
    n_rows: usize,
    n_cols: usize,
    data: &[f64],
    width: Width,
    sidecar: &Sidecar,
) -> Result<()> {
    let bytes = encode_emb1(n_rows, n_cols, data, width)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let mut json = serde_json::to_vec_pretty(sidecar)?;
    json.push(b'\n');
    write_atomic(&sidecar_path(path), &json)
}

pub(crate) fn read_with_sidecar(path: &Path) -> Result<(usize, usize, Vec<f64>, Sidecar)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (n_rows, n_cols, data) = decode_emb1(&bytes)?;
    let meta_path = sidecar_path(path);
    let meta = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let sidecar: Sidecar = serde_json::from_slice(&meta)?;
    if sidecar.ids.len() != n_rows {
        return Err(Error::MetaMismatch {
            ids: sidecar.ids.len(),
            rows: n_rows,
        });
    }
    Ok((n_rows, n_cols, data, sidecar))
}

pub fn read_embedding(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let (_, n_cols, data, sidecar) = read_with_sidecar(path.as_ref())?;
    EmbeddingMatrix::new(sidecar.ids, n_cols, data, sidecar.source_tag)
}

pub fn write_embedding(m: &EmbeddingMatrix, path: impl AsRef<Path>, width: Width) -> Result<()> {
    let sidecar = Sidecar {
        ids: m.ids.clone(),
        source_tag: m.source_tag.clone(),
        metric_tag: None,
    };
    write_with_sidecar(
        path.as_ref(),
        m.n_rows(),
        m.n_cols,
        &m.data,
        width,
        &sidecar,
    )
}

/// Restrict both matrices to their shared ids, in `a`'s row order.
pub fn align_by_ids(
    a: &EmbeddingMatrix,
    b: &EmbeddingMatrix,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    let (ia, ib) = shared_indices(&a.ids, &b.ids)?;
    if ia.len() == a.n_rows() && ib.iter().enumerate().all(|(k, &j)| k == j) {
        return Ok((a.clone(), b.clone()));
    }
    Ok((a.select_rows(&ia)?, b.select_rows(&ib)?))
}

/// Row indices into `a` and `b` for every id present in both, in `a`'s order.
pub fn shared_indices(a: &[String], b: &[String]) -> Result<(Vec<usize>, Vec<usize>)> {
    let lookup: HashMap<&str, usize> = b
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let (ia, ib): (Vec<usize>, Vec<usize>) = a
        .iter()
        .enumerate()
        .filter_map(|(i, id)| lookup.get(id.as_str()).map(|&j| (i, j)))
        .unzip();
    if ia.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    Ok((ia, ib))
}

//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the library's statistics or solvers; each routine
//! recomputes its quantity from the definition.
#![allow(dead_code)]

/// Rank of each entry by counting: 1 + #smaller + (#equal - 1) / 2.
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let smaller = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Pearson via covariance over standard deviations (population form).
pub fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / n;
    let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n).sqrt();
    cov / (sx * sy)
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let rx = brute_ranks(x);
    let ry = brute_ranks(y);
    let constant = |r: &[f64]| r.iter().all(|&v| v == r[0]);
    if x.len() < 3 || constant(&rx) || constant(&ry) {
        return None;
    }
    Some(brute_pearson(&rx, &ry))
}

/// Entry (i, j) of a square matrix stored as nested rows.
pub fn lower(m: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..m.len() {
        for j in 0..i {
            out.push(m[i][j]);
        }
    }
    out
}

/// Every index tuple of {0..n}^n, equally weighted. Returns the valid
/// replicate correlations and the number of degenerate tuples.
pub fn exhaustive_bootstrap(a: &[Vec<f64>], b: &[Vec<f64>]) -> (Vec<f64>, usize) {
    let n = a.len();
    let total = n.pow(n as u32);
    let mut values = Vec::new();
    let mut degenerate = 0;
    for code in 0..total {
        let mut idx = Vec::with_capacity(n);
        let mut c = code;
        for _ in 0..n {
            idx.push(c % n);
            c /= n;
        }
        let mut xa = Vec::new();
        let mut xb = Vec::new();
        for p in 0..n {
            for q in 0..p {
                if idx[p] != idx[q] {
                    xa.push(a[idx[p]][idx[q]]);
                    xb.push(b[idx[p]][idx[q]]);
                }
            }
        }
        match brute_spearman(&xa, &xb) {
            Some(r) => values.push(r),
            None => degenerate += 1,
        }
    }
    (values, degenerate)
}

/// Linear-interpolated percentile (q in [0, 100]) of unsorted data.
pub fn brute_percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    a.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let inner = b.len();
    let cols = b[0].len();
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

pub fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a[0].len())
        .map(|j| a.iter().map(|row| row[j]).collect())
        .collect()
}

fn center_columns(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len() as f64;
    let means: Vec<f64> = (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    a.iter()
        .map(|r| r.iter().zip(&means).map(|(v, m)| v - m).collect())
        .collect()
}

/// `(Xc'Xc + lambda I)^-1 Xc'Yc` by explicit inversion.
pub fn closed_form_ridge(x: &[Vec<f64>], y: &[Vec<f64>], lambda: f64) -> Vec<Vec<f64>> {
    let xc = center_columns(x);
    let yc = center_columns(y);
    let xt = transpose(&xc);
    let mut gram = matmul(&xt, &xc);
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += lambda;
    }
    matmul(&invert(&gram), &matmul(&xt, &yc))
}

//! Dense kernels shared by every solver: the column-major design matrix,
//! column normalization, top-T magnitude selection and the symmetric
//! positive (semi)definite solve used for restricted subproblems.

use std::cmp::Ordering;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

/// Relative pivot tolerance below which a symmetric system is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Relative asymmetry accepted by [`solve_spd_min_norm`].
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Dense `n x p` matrix stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Wraps column-major storage, rejecting empty shapes and non-finite entries.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return invalid(format!("matrix shape {rows}x{cols} is empty"));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return invalid(format!(
                "non-finite entry at row {}, column {}",
                pos % rows,
                pos / rows
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row slices (convenient in tests and parsers).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        let mut data = vec![0.0; n * p];
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                data[j * n + i] = v;
            }
        }
        Self::from_col_major(n, p, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    #[inline]
    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn as_col_major(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    /// `X x` for a dense coefficient vector.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "mul_vec: length mismatch");
        let mut out = vec![0.0; self.rows];
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                axpy(xj, self.column(j), &mut out);
            }
        }
        out
    }

    /// `X_S v` where `v` is aligned with the column subset `S`.
    pub fn mul_columns(&self, cols: &[usize], values: &[f64]) -> Vec<f64> {
        debug_assert_eq!(cols.len(), values.len());
        let mut out = vec![0.0; self.rows];
        for (&j, &v) in cols.iter().zip(values) {
            if v != 0.0 {
                axpy(v, self.column(j), &mut out);
            }
        }
        out
    }

    /// `X^T r`.
    pub fn tr_mul_vec(&self, r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.rows, "tr_mul_vec: length mismatch");
        (0..self.cols).map(|j| dot(self.column(j), r)).collect()
    }

    /// `X_S^T r` for a column subset.
    pub fn tr_mul_columns(&self, cols: &[usize], r: &[f64]) -> Vec<f64> {
        cols.iter().map(|&j| dot(self.column(j), r)).collect()
    }

    /// `X_S^T diag(w) X_S / scale` as a symmetric nalgebra matrix.
    pub fn weighted_gram(&self, cols: &[usize], weights: Option<&[f64]>, scale: f64) -> DMatrix<f64> {
        let s = cols.len();
        let mut g = DMatrix::zeros(s, s);
        let mut scratch = vec![0.0; self.rows];
        for a in 0..s {
            let ca = self.column(cols[a]);
            let wa: &[f64] = match weights {
                Some(w) => {
                    for ((o, &x), &wi) in scratch.iter_mut().zip(ca).zip(w) {
                        *o = x * wi;
                    }
                    &scratch
                }
                None => ca,
            };
            for b in a..s {
                let v = dot(wa, self.column(cols[b])) / scale;
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
        }
        g
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> DenseMatrix {
        let m = rows.len();
        let mut data = Vec::with_capacity(m * self.cols);
        for j in 0..self.cols {
            let col = self.column(j);
            data.extend(rows.iter().map(|&i| col[i]));
        }
        DenseMatrix {
            rows: m,
            cols: self.cols,
            data,
        }
    }

    pub fn column_norm(&self, j: usize) -> f64 {
        dot(self.column(j), self.column(j)).sqrt()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Rescales every column to Euclidean norm `sqrt(n)`.
///
/// Returns the normalized matrix and the multiplicative factor applied to
/// each column (`normalized_j = original_j * scale_j`), so coefficients on
/// the normalized scale map back via `beta_original_j = beta_j * scale_j`.
pub fn normalize_columns(m: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
    let (out, scales, zero) = normalize_columns_allow_zero(m);
    match zero.first() {
        Some(&column) => Err(Error::DegenerateColumn { column }),
        None => Ok((out, scales)),
    }
}

/// Like [`normalize_columns`] but leaves all-zero columns untouched (scale 0)
/// and reports their indices.
pub fn normalize_columns_allow_zero(m: &DenseMatrix) -> (DenseMatrix, Vec<f64>, Vec<usize>) {
    let target = (m.nrows() as f64).sqrt();
    let mut out = m.clone();
    let mut scales = Vec::with_capacity(m.ncols());
    let mut zero = Vec::new();
    for j in 0..m.ncols() {
        let norm = m.column_norm(j);
        if norm == 0.0 {
            zero.push(j);
            scales.push(0.0);
            continue;
        }
        let s = target / norm;
        for v in out.column_mut(j) {
            *v *= s;
        }
        scales.push(s);
    }
    (out, scales, zero)
}

/// The `T` largest-magnitude entries of a vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TopTSelection {
    /// The `T`-th largest absolute value.
    pub threshold: f64,
    /// Selected indices in ascending order.
    pub indices: Vec<usize>,
}

#[inline]
fn magnitude_order(u: &[f64], a: usize, b: usize) -> Ordering {
    u[b].abs().total_cmp(&u[a].abs()).then(a.cmp(&b))
}

/// Selects the `t` entries of largest magnitude, breaking ties by lower index.
pub fn top_t_select(u: &[f64], t: usize) -> Result<TopTSelection> {
    top_t_select_masked(u, t, None)
}

/// [`top_t_select`] restricted to indices whose `eligible` flag is set.
pub fn top_t_select_masked(u: &[f64], t: usize, eligible: Option<&[bool]>) -> Result<TopTSelection> {
    let mut idx: Vec<usize> = match eligible {
        Some(mask) => {
            if mask.len() != u.len() {
                return Err(Error::DimensionMismatch(format!(
                    "eligibility mask has {} entries, vector has {}",
                    mask.len(),
                    u.len()
                )));
            }
            (0..u.len()).filter(|&i| mask[i]).collect()
        }
        None => (0..u.len()).collect(),
    };
    if t == 0 || t > idx.len() {
        return invalid(format!(
            "T = {t} outside 1..={} selectable entries",
            idx.len()
        ));
    }
    idx.select_nth_unstable_by(t - 1, |&a, &b| magnitude_order(u, a, b));
    let threshold = u[idx[t - 1]].abs();
    idx.truncate(t);
    idx.sort_unstable();
    Ok(TopTSelection {
        threshold,
        indices: idx,
    })
}

/// Solves `A x = b` for symmetric positive semidefinite `A`.
///
/// Positive definite systems are solved through a pivoted Cholesky
/// factorization. When a pivot falls below `RANK_TOL` times the largest one
/// the system is treated as singular and the minimum-norm least-squares
/// solution is returned (SVD with the same relative cutoff).
pub fn solve_spd_min_norm(a: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "system {}x{} with right-hand side of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let scale = a.amax();
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
        return invalid(format!("matrix is not symmetric (max asymmetry {asym:e})"));
    }
    if scale == 0.0 {
        return Ok(vec![0.0; n]);
    }
    match PivotedCholesky::factor(a, RANK_TOL) {
        Some(chol) if chol.rank == n => Ok(chol.solve(b)),
        _ => Ok(min_norm_svd(a, b)),
    }
}

/// Cholesky-solves an SPD system, returning `None` when the system is
/// numerically rank deficient.
pub(crate) fn solve_spd_strict(a: &DMatrix<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let chol = PivotedCholesky::factor(a, RANK_TOL)?;
    (chol.rank == a.nrows()).then(|| chol.solve(b))
}

fn min_norm_svd(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = a.nrows();
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = RANK_TOL * smax;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut x = vec![0.0; n];
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff {
            continue;
        }
        let coef = (0..n).map(|i| u[(i, k)] * b[i]).sum::<f64>() / s;
        for (j, xj) in x.iter_mut().enumerate() {
            *xj += coef * vt[(k, j)];
        }
    }
    x
}

/// `P A P^T = L L^T` with diagonal pivoting; stops at the first pivot below
/// `tol` times the largest diagonal entry.
struct PivotedCholesky {
    /// Lower-triangular factor, row-major `n x n` (only the first `rank` columns are valid).
    l: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
    n: usize,
}

impl PivotedCholesky {
    fn factor(a: &DMatrix<f64>, tol: f64) -> Option<Self> {
        let n = a.nrows();
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                w[i * n + j] = a[(i, j)];
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut first = 0.0;
        let mut rank = n;
        for k in 0..n {
            let (piv, &maxd) = (k..n)
                .map(|j| (j, &w[j * n + j]))
                .max_by(|x, y| x.1.total_cmp(y.1).then(y.0.cmp(&x.0)))?;
            if !maxd.is_finite() {
                return None;
            }
            if k == 0 {
                first = maxd;
            }
            if maxd <= tol * first || maxd <= 0.0 {
                rank = k;
                break;
            }
            if piv != k {
                perm.swap(k, piv);
                for c in 0..n {
                    w.swap(k * n + c, piv * n + c);
                }
                for r in 0..n {
                    w.swap(r * n + k, r * n + piv);
                }
            }
            let lkk = w[k * n + k].sqrt();
            w[k * n + k] = lkk;
            for i in (k + 1)..n {
                w[i * n + k] /= lkk;
            }
            for j in (k + 1)..n {
                let ljk = w[j * n + k];
                for i in j..n {
                    w[i * n + j] -= w[i * n + k] * ljk;
                }
                // keep the trailing block symmetric for pivot search
                for i in j..n {
                    w[j * n + i] = w[i * n + j];
                }
            }
        }
        Some(Self { l: w, perm, rank, n })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut z: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= self.l[i * n + k] * z[k];
            }
            z[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * z[k];
            }
            z[i] = s / self.l[i * n + i];
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = z[i];
        }
        x
    }
}

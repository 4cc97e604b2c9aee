//! Dense linear algebra on small row-major matrices.
//!
//! Everything the optimizers need lives here: a [`Matrix`] carrier, thin SVD by
//! one-sided (Hestenes) Jacobi, Householder QR, a Halko-style randomized SVD,
//! Gaussian sampling and principal angles between subspaces. Matrices at the
//! scales this crate targets have at most a few hundred rows, so the routines
//! favour accuracy over asymptotic speed.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SplitMix64;

/// Sweep cap for the Jacobi SVD.
pub const MAX_JACOBI_SWEEPS: usize = 100;

/// Relative threshold on `|R_kk|` below which [`orthonormalize_qr`] reports
/// rank deficiency.
pub const QR_RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("{op}: shape mismatch, left is {left:?}, right is {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("data length {got} does not match {rows}x{cols}")]
    InvalidData {
        rows: usize,
        cols: usize,
        got: usize,
    },
    #[error("{op}: matrix has no entries")]
    Empty { op: &'static str },
    #[error("{op}: non-finite entry")]
    NonFinite { op: &'static str },
    #[error("jacobi svd did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error(
        "qr: column {column} is numerically dependent (|r_kk| = {diag:e}, threshold {threshold:e})"
    )]
    RankDeficient {
        column: usize,
        diag: f64,
        threshold: f64,
    },
    #[error("randomized svd: rank {rank} + oversample {oversample} exceeds min dimension of {rows}x{cols}")]
    InvalidRank {
        rank: usize,
        oversample: usize,
        rows: usize,
        cols: usize,
    },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Dense real matrix in row-major order: entry `(i, j)` is `data[i * cols + j]`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::InvalidData {
                rows,
                cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::eye(n, n)
    }

    /// First `cols` columns of the `rows`-dimensional identity.
    pub fn eye(rows: usize, cols: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows.min(cols) {
            m.data[i * cols + i] = 1.0;
        }
        m
    }

    /// Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(
                r.len(),
                ncols,
                "row {i} has {} entries, expected {ncols}",
                r.len()
            );
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols: ncols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    /// Builds a matrix from column vectors of equal length.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Self {
        let cols = columns.len();
        let mut m = Self::zeros(rows, cols);
        for (j, c) in columns.iter().enumerate() {
            assert_eq!(c.len(), rows);
            for (i, &x) in c.iter().enumerate() {
                m.data[i * cols + j] = x;
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Number of stored scalars.
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Columns `start..end` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        Matrix::from_fn(self.rows, end - start, |i, j| self.get(i, start + j))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(LinalgError::NonFinite { op })
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(self.mismatch("matmul", other));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix {
            rows: m,
            cols: n,
            data: out,
        })
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(self.mismatch("t_matmul", other));
        }
        let (k, m, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for p in 0..k {
            let arow = &self.data[p * m..(p + 1) * m];
            let brow = &other.data[p * n..(p + 1) * n];
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix {
            rows: m,
            cols: n,
            data: out,
        })
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(self.mismatch("matmul_t", other));
        }
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &other.data[j * k..(j + 1) * k];
                out[i * n + j] = dot(arow, brow);
            }
        }
        Ok(Matrix {
            rows: m,
            cols: n,
            data: out,
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("hadamard", other, |a, b| a * b)
    }

    pub fn zip_with(
        &self,
        op: &'static str,
        other: &Matrix,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(self.mismatch(op, other));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|x| c * x)
    }

    /// `self += alpha · other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(self.mismatch("add_scaled", other));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn column_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, &x) in sq.iter_mut().zip(self.row(i)) {
                *s += x * x;
            }
        }
        sq.into_iter().map(f64::sqrt).collect()
    }

    /// Multiplies column `j` by `factors[j]`.
    pub fn scale_columns(&self, factors: &[f64]) -> Matrix {
        assert_eq!(factors.len(), self.cols);
        Matrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j) * factors[j])
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest entrywise absolute difference; panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `max |selfᵀ·self − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.t_matmul(self).expect("square gram");
        let mut err: f64 = 0.0;
        for i in 0..g.rows {
            for j in 0..g.cols {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((g.get(i, j) - target).abs());
            }
        }
        err
    }

    fn mismatch(&self, op: &'static str, other: &Matrix) -> LinalgError {
        LinalgError::ShapeMismatch {
            op,
            left: self.shape(),
            right: other.shape(),
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn frobenius_norm(a: &Matrix) -> f64 {
    // Scaled accumulation avoids overflow for large entries.
    let scale = a.max_abs();
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let ss: f64 = a.data.iter().map(|x| (x / scale) * (x / scale)).sum();
    scale * ss.sqrt()
}

/// Matrix of i.i.d. standard normals, filled row by row.
pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut SplitMix64) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(LinalgError::Empty {
            op: "gaussian_matrix",
        });
    }
    let data = (0..rows * cols).map(|_| rng.next_gaussian()).collect();
    Ok(Matrix { rows, cols, data })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    /// `u · diag(s) · vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        self.u
            .scale_columns(&self.s)
            .matmul_t(&self.v)
            .expect("consistent svd factors")
    }
}

/// Thin SVD: `min(rows, cols)` triplets, singular values non-increasing.
///
/// The largest-magnitude entry of every left singular vector is made positive
/// (the paired right vector flips with it), so results are reproducible.
pub fn thin_svd(a: &Matrix) -> Result<SvdResult> {
    if a.is_empty() {
        return Err(LinalgError::Empty { op: "thin_svd" });
    }
    a.ensure_finite("thin_svd")?;
    let mut svd = if a.rows >= a.cols {
        jacobi_tall(a)?
    } else {
        let t = jacobi_tall(&a.transpose())?;
        SvdResult {
            u: t.v,
            s: t.s,
            v: t.u,
        }
    };
    fix_signs(&mut svd);
    Ok(svd)
}

/// One-sided Jacobi on a matrix with `rows >= cols`.
fn jacobi_tall(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = 2.0 * (m as f64).sqrt() * f64::EPSILON;
    let mut norms: Vec<f64> = w.iter().map(|c| dot(c, c)).collect();

    let mut converged = false;
    for _sweep in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(&w[p], &w[q]);
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut w, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
                norms[p] = dot(&w[p], &w[p]);
                norms[q] = dot(&w[q], &w[q]);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence {
            sweeps: MAX_JACOBI_SWEEPS,
        });
    }

    let sigma: Vec<f64> = norms.iter().map(|x| x.sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));

    let smax = sigma[order[0]];
    let cutoff = smax * (m as f64) * f64::EPSILON;
    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut pending = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        if sigma[j] > cutoff && sigma[j] > 0.0 {
            ucols.push(w[j].iter().map(|x| x / sigma[j]).collect());
        } else {
            ucols.push(Vec::new());
            pending.push(k);
        }
    }
    complete_orthonormal(m, &mut ucols, &pending);

    let s = order.iter().map(|&j| sigma[j]).collect();
    let vcols: Vec<Vec<f64>> = order.iter().map(|&j| v[j].clone()).collect();
    Ok(SvdResult {
        u: Matrix::from_columns(m, &ucols),
        s,
        v: Matrix::from_columns(n, &vcols),
    })
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills `cols[k]` for every `k` in `pending` with a unit vector orthogonal to
/// all other columns, drawing candidates from the canonical basis.
fn complete_orthonormal(m: usize, cols: &mut [Vec<f64>], pending: &[usize]) {
    for &k in pending {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for e in 0..m {
            let mut cand = vec![0.0; m];
            cand[e] = 1.0;
            // Two passes of modified Gram-Schmidt.
            for _ in 0..2 {
                for (idx, c) in cols.iter().enumerate() {
                    if idx == k || c.is_empty() {
                        continue;
                    }
                    let proj = dot(&cand, c);
                    for (x, y) in cand.iter_mut().zip(c) {
                        *x -= proj * y;
                    }
                }
            }
            let nrm = dot(&cand, &cand).sqrt();
            if best.as_ref().is_none_or(|(b, _)| nrm > *b + 1e-12) {
                best = Some((nrm, cand));
            }
            if nrm > 0.7 {
                break;
            }
        }
        let (nrm, cand) = best.expect("m >= 1");
        cols[k] = cand.into_iter().map(|x| x / nrm).collect();
    }
}

fn fix_signs(svd: &mut SvdResult) {
    let (m, k) = svd.u.shape();
    for j in 0..k {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..m {
            let a = svd.u.get(i, j).abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if svd.u.get(best, j) < 0.0 {
            for i in 0..m {
                let x = svd.u.get(i, j);
                svd.u.set(i, j, -x);
            }
            for i in 0..svd.v.rows() {
                let x = svd.v.get(i, j);
                svd.v.set(i, j, -x);
            }
        }
    }
}

/// Householder QR of a matrix with `rows >= cols`: thin `Q` plus the diagonal
/// of `R`. `Q` is orthonormal even when the input is rank deficient.
pub fn householder_qr(a: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let (m, n) = a.shape();
    if a.is_empty() {
        return Err(LinalgError::Empty { op: "qr" });
    }
    if m < n {
        return Err(LinalgError::ShapeMismatch {
            op: "qr (needs rows >= cols)",
            left: (m, n),
            right: (n, n),
        });
    }
    a.ensure_finite("qr")?;
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut reflectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    let mut rdiag = Vec::with_capacity(n);
    for k in 0..n {
        let x = &cols[k][k..];
        let norm = dot(x, x).sqrt();
        if norm == 0.0 {
            reflectors.push(None);
            rdiag.push(0.0);
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vn = dot(&v, &v).sqrt();
        if vn == 0.0 {
            reflectors.push(None);
            rdiag.push(cols[k][k]);
            continue;
        }
        for x in v.iter_mut() {
            *x /= vn;
        }
        for col in cols.iter_mut().skip(k) {
            let tail = &mut col[k..];
            let d = 2.0 * dot(&v, tail);
            for (t, vi) in tail.iter_mut().zip(&v) {
                *t -= d * vi;
            }
        }
        rdiag.push(alpha);
        reflectors.push(Some(v));
    }
    // Q = H_0 ... H_{n-1} applied to the first n identity columns.
    let mut q: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            e
        })
        .collect();
    for k in (0..n).rev() {
        if let Some(v) = &reflectors[k] {
            for col in q.iter_mut() {
                let tail = &mut col[k..];
                let d = 2.0 * dot(v, tail);
                for (t, vi) in tail.iter_mut().zip(v) {
                    *t -= d * vi;
                }
            }
        }
    }
    // Positive diagonal of R makes Q unique for full-rank input.
    for (j, r) in rdiag.iter_mut().enumerate() {
        if *r < 0.0 {
            *r = -*r;
            for x in q[j].iter_mut() {
                *x = -*x;
            }
        }
    }
    Ok((Matrix::from_columns(m, &q), rdiag))
}

/// Orthonormal basis for the column span of `a` (rows ≥ cols), normalized so
/// that `R` has a positive diagonal. Rejects numerically dependent columns.
pub fn orthonormalize_qr(a: &Matrix) -> Result<Matrix> {
    let (q, rdiag) = householder_qr(a)?;
    let threshold = QR_RANK_TOL * frobenius_norm(a);
    for (column, &d) in rdiag.iter().enumerate() {
        if d.abs() < threshold || d == 0.0 {
            return Err(LinalgError::RankDeficient {
                column,
                diag: d,
                threshold,
            });
        }
    }
    Ok(q)
}

/// Halko-style randomized SVD: Gaussian sketch of width `rank + oversample`,
/// `power_iters` rounds of re-orthonormalized subspace iteration, then an exact
/// thin SVD of the small projected matrix. Returns exactly `rank` triplets.
pub fn randomized_svd(
    a: &Matrix,
    rank: usize,
    oversample: usize,
    power_iters: usize,
    rng: &mut SplitMix64,
) -> Result<SvdResult> {
    let (m, n) = a.shape();
    if a.is_empty() {
        return Err(LinalgError::Empty {
            op: "randomized_svd",
        });
    }
    if rank == 0 || rank + oversample > m.min(n) {
        return Err(LinalgError::InvalidRank {
            rank,
            oversample,
            rows: m,
            cols: n,
        });
    }
    a.ensure_finite("randomized_svd")?;
    let width = rank + oversample;
    let omega = gaussian_matrix(n, width, rng)?;
    let mut q = householder_qr(&a.matmul(&omega)?)?.0;
    for _ in 0..power_iters {
        let z = householder_qr(&a.t_matmul(&q)?)?.0;
        q = householder_qr(&a.matmul(&z)?)?.0;
    }
    let b = q.t_matmul(a)?;
    let small = thin_svd(&b)?;
    let mut out = SvdResult {
        u: q.matmul(&small.u)?.columns(0, rank),
        s: small.s[..rank].to_vec(),
        v: small.v.columns(0, rank),
    };
    fix_signs(&mut out);
    Ok(out)
}

/// Principal angles (ascending, radians) between the column spans of two
/// orthonormal bases with the same number of rows.
///
/// Cosines come from the singular values of `s1ᵀ s2` and sines from those of
/// `(I − s1 s1ᵀ) s2`; pairing them through `atan2` keeps small angles accurate.
pub fn principal_angles(s1: &Matrix, s2: &Matrix) -> Result<Vec<f64>> {
    if s1.rows != s2.rows {
        return Err(s1.mismatch("principal_angles", s2));
    }
    let k = s1.cols.min(s2.cols);
    let cosines = thin_svd(&s1.t_matmul(s2)?)?.s;
    let resid = s2.sub(&s1.matmul(&s1.t_matmul(s2)?)?)?;
    let mut sines = thin_svd(&resid)?.s;
    sines.reverse();
    Ok((0..k)
        .map(|i| {
            let c = cosines.get(i).copied().unwrap_or(0.0).min(1.0);
            let s = sines.get(i).copied().unwrap_or(0.0).min(1.0);
            s.atan2(c)
        })
        .collect())
}

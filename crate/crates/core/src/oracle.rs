//! Naive dense reference routines for desk-scale validation.
//!
//! Everything here is plain loops over a column-major [`DenseMatrix`]; no
//! code is shared with the fast path.

use crate::error::{H2Error, Result};
use crate::geometry::PointSet;
use crate::kernels::KernelSpec;

pub const DEFAULT_ORACLE_CAP: usize = 4096;

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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
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

    pub fn from_row_major(rows: usize, cols: usize, values: &[f64]) -> Self {
        Self::from_fn(rows, cols, |i, j| values[i * cols + j])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
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

    /// Column-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for (j, &xj) in x.iter().enumerate() {
            for (yi, a) in y.iter_mut().zip(self.column(j)) {
                *yi += a * xj;
            }
        }
        y
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            for k in 0..self.cols {
                let b = other.get(k, j);
                if b == 0.0 {
                    continue;
                }
                for i in 0..self.rows {
                    out.data[j * self.rows + i] += self.get(i, k) * b;
                }
            }
        }
        out
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Sub-matrix on the given row and column index lists.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> DenseMatrix {
        DenseMatrix::from_fn(rows.len(), cols.len(), |i, j| self.get(rows[i], cols[j]))
    }
}

/// Dense kernel matrix with entries `spec.entry(points, i, j)` in the order
/// of `points`.
pub fn assemble_dense(spec: &KernelSpec, points: &PointSet, cap: usize) -> Result<DenseMatrix> {
    let n = points.len();
    if n > cap {
        return Err(H2Error::OracleCapExceeded { n, cap });
    }
    Ok(DenseMatrix::from_fn(n, n, |i, j| spec.entry(points, i, j)))
}

/// Gaussian elimination with partial pivoting on a copy of `a`.
pub fn dense_lu_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(H2Error::InvalidArgument("matrix must be square".into()));
    }
    if b.len() != n {
        return Err(H2Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let mut m = a.clone();
    let mut x = b.to_vec();
    let scale = a.max_abs();
    for k in 0..n {
        let mut p = k;
        for i in k + 1..n {
            if m.get(i, k).abs() > m.get(p, k).abs() {
                p = i;
            }
        }
        if m.get(p, k).abs() <= 1e-14 * scale || scale == 0.0 {
            return Err(H2Error::Singular);
        }
        if p != k {
            for j in 0..n {
                m.data.swap(j * n + k, j * n + p);
            }
            x.swap(k, p);
        }
        // Multipliers overwrite column k below the pivot; trailing columns
        // are updated one at a time (column-major storage).
        let piv = m.get(k, k);
        let (head, tail) = m.data.split_at_mut((k + 1) * n);
        let l = &mut head[k * n + k + 1..];
        for v in l.iter_mut() {
            *v /= piv;
        }
        for (i, &li) in (k + 1..n).zip(l.iter()) {
            x[i] -= li * x[k];
        }
        for col in tail.chunks_exact_mut(n) {
            let u = col[k];
            if u == 0.0 {
                continue;
            }
            for (c, &li) in col[k + 1..].iter_mut().zip(l.iter()) {
                *c -= li * u;
            }
        }
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for j in k + 1..n {
            s -= m.get(k, j) * x[j];
        }
        x[k] = s / m.get(k, k);
    }
    Ok(x)
}

/// Schur complement `A22 - A21 A11^{-1} A12` after eliminating the leading
/// `r` indices, by column-wise dense solves.
pub fn dense_schur_complement(a: &DenseMatrix, r: usize) -> Result<DenseMatrix> {
    let n = a.rows();
    let lead: Vec<usize> = (0..r).collect();
    let rest: Vec<usize> = (r..n).collect();
    let a11 = a.select(&lead, &lead);
    let a12 = a.select(&lead, &rest);
    let a21 = a.select(&rest, &lead);
    let mut out = a.select(&rest, &rest);
    for j in 0..rest.len() {
        let z = dense_lu_solve(&a11, a12.column(j))?;
        let corr = a21.matvec(&z);
        for (i, c) in corr.into_iter().enumerate() {
            out.set(i, j, out.get(i, j) - c);
        }
    }
    Ok(out)
}

/// Lower Cholesky factor; fails when `a` is not numerically positive
/// definite.
pub fn cholesky(a: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > 0.0) {
            return Err(H2Error::InvalidArgument(format!(
                "matrix is not positive definite (pivot {j})"
            )));
        }
        let d = d.sqrt();
        l.set(j, j, d);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / d);
        }
    }
    Ok(l)
}

/// One-sided Jacobi SVD `a = U diag(sigma) V^T`, singular values descending.
pub fn dense_svd(a: &DenseMatrix) -> (DenseMatrix, Vec<f64>, DenseMatrix) {
    if a.rows() < a.cols() {
        let (u, s, v) = dense_svd(&a.transpose());
        return (v, s, u);
    }
    let (m, n) = (a.rows(), a.cols());
    let mut u = a.clone();
    let mut v = DenseMatrix::identity(n);
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let (up, uq) = (u.get(i, p), u.get(i, q));
                    alpha += up * up;
                    beta += uq * uq;
                    gamma += up * uq;
                }
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (up, uq) = (u.get(i, p), u.get(i, q));
                    u.set(i, p, c * up - s * uq);
                    u.set(i, q, s * up + c * uq);
                }
                for i in 0..n {
                    let (vp, vq) = (v.get(i, p), v.get(i, q));
                    v.set(i, p, c * vp - s * vq);
                    v.set(i, q, s * vp + c * vq);
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigma: Vec<f64> = (0..n)
        .map(|j| u.column(j).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
    let u_sorted = DenseMatrix::from_fn(m, n, |i, j| {
        let c = order[j];
        if sigma[c] > 0.0 {
            u.get(i, c) / sigma[c]
        } else {
            0.0
        }
    });
    let v_sorted = DenseMatrix::from_fn(n, n, |i, j| v.get(i, order[j]));
    sigma = order.iter().map(|&c| sigma[c]).collect();
    (u_sorted, sigma, v_sorted)
}

/// `sigma_max(a)` by power iteration on `a^T a`, run to a relative change
/// below `1e-13` (at most 5000 steps).
pub fn dense_norm2(a: &DenseMatrix) -> f64 {
    let n = a.cols();
    if n == 0 || a.rows() == 0 {
        return 0.0;
    }
    let at = a.transpose();
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.618_034).fract()).collect();
    let mut prev = 0.0;
    let mut est = 0.0;
    for _ in 0..5000 {
        let nx = norm(&x);
        if nx == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let y = a.matvec(&x);
        est = norm(&y);
        if (est - prev).abs() <= 1e-13 * est {
            break;
        }
        prev = est;
        x = at.matvec(&y);
    }
    est
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `||a - b|| / ||b||`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(b)
}

//! Small dense kernels used on the fast path.
//!
//! GEMM, QR and SVD come from nalgebra. The pivoted LU is written here
//! because the solve needs both `A x = b` and `A^T x = b` from a single
//! factorization and because the top-level dense factorization wants a
//! blocked, GEMM-rich variant.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, SVD};

use crate::error::{H2Error, Result};

/// Relative pivot threshold below which a block is declared singular.
pub const PIVOT_TOLERANCE: f64 = 1e-14;

const LU_BLOCK: usize = 48;

/// Thin QR factorization `a = q r`. For `m >= n`, `q` is `m x n`; otherwise
/// `q` is `m x m` and `r` is `m x n`.
pub fn thin_qr(a: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        let k = m.min(n);
        return (DMatrix::zeros(m, k), DMatrix::zeros(k, n));
    }
    let qr = a.qr();
    (qr.q(), qr.r())
}

/// Columns spanning the orthogonal complement of the orthonormal columns of `v`.
///
/// Returns an `m x (m - k)` matrix `c` with `[c, v]` orthogonal.
pub fn orthonormal_complement(v: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, k) = v.shape();
    if k >= m {
        return DMatrix::zeros(m, 0);
    }
    if k == 0 {
        return DMatrix::identity(m, m);
    }
    // Householder QR of [v | I]: the first k columns of Q span range(v), the
    // remaining m - k columns complete it.
    let mut stacked = DMatrix::zeros(m, k + m);
    stacked.view_mut((0, 0), (m, k)).copy_from(v);
    stacked.view_mut((0, k), (m, m)).fill_with_identity();
    let q = stacked.qr().q();
    q.columns(k, m - k).into_owned()
}

/// Singular value decomposition with singular values sorted in descending
/// order. Returns `(u, sigma, v_t)` in thin form.
pub fn sorted_svd(a: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return (DMatrix::zeros(m, 0), Vec::new(), DMatrix::zeros(0, n));
    }
    let svd = SVD::new(a, true, true);
    let u = svd.u.expect("left vectors requested");
    let v_t = svd.v_t.expect("right vectors requested");
    let sigma = svd.singular_values;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
    let mut us = DMatrix::zeros(m, k);
    let mut vs = DMatrix::zeros(k, n);
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        us.set_column(dst, &u.column(src));
        vs.set_row(dst, &v_t.row(src));
        s.push(sigma[src]);
    }
    (us, s, vs)
}

/// Left singular vectors and singular values of `y` computed through a QR
/// factorization of `y^T` followed by an SVD of the small triangular factor.
pub fn left_singular_via_qr(y: DMatrixView<'_, f64>) -> (DMatrix<f64>, Vec<f64>) {
    let (m, w) = y.shape();
    if m == 0 || w == 0 {
        return (DMatrix::zeros(m, 0), Vec::new());
    }
    let r = householder_r(y.transpose());
    // y = r^T q^T, so the left singular vectors of y are those of r^T.
    let (u, s, _) = sorted_svd(r.transpose());
    (u, s)
}

const QR_LEAF: usize = 8;

/// Triangular factor `R` (`min(m, n) x n`) of a Householder QR of `a`.
/// `Q` is never formed. Column ranges are split recursively and the left
/// half's reflectors reach the right half as one block reflector
/// `I - V T V^T`, so most of the work is GEMM.
pub fn householder_r(mut a: DMatrix<f64>) -> DMatrix<f64> {
    householder_r_in_place(a.as_view_mut())
}

/// [`householder_r`] overwriting `a` with the reflectors.
pub fn householder_r_in_place(mut a: DMatrixViewMut<'_, f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    let kmax = m.min(n);
    let mut tau = vec![0.0; kmax];
    factor_columns(&mut a, &mut tau, 0, kmax);
    if n > kmax {
        apply_reflectors(&mut a, &tau, 0, kmax, kmax, n);
    }
    let mut r = DMatrix::zeros(kmax, n);
    for j in 0..n {
        let top = (j + 1).min(kmax);
        r.view_mut((0, j), (top, 1)).copy_from(&a.view((0, j), (top, 1)));
    }
    r
}

// QR of columns c0..c1 (rows c0..), updates confined to those columns.
fn factor_columns(a: &mut DMatrixViewMut<'_, f64>, tau: &mut [f64], c0: usize, c1: usize) {
    let m = a.nrows();
    if c1 - c0 <= QR_LEAF {
        for j in c0..c1 {
            tau[j] = householder_column(a, j);
            let tj = tau[j];
            if tj == 0.0 {
                continue;
            }
            for c in j + 1..c1 {
                let (vcol, mut ccol) = a.columns_range_pair_mut(j, c);
                let v = vcol.rows(j + 1, m - j - 1);
                let mut cc = ccol.rows_mut(j, m - j);
                let w = cc[0] + v.dot(&cc.rows(1, m - j - 1));
                cc[0] -= tj * w;
                cc.rows_mut(1, m - j - 1).axpy(-tj * w, &v, 1.0);
            }
        }
        return;
    }
    let mid = c0 + (c1 - c0) / 2;
    factor_columns(a, tau, c0, mid);
    apply_reflectors(a, tau, c0, mid, mid, c1);
    factor_columns(a, tau, mid, c1);
}

// Applies H_{c1-1} ... H_{c0} (reflectors stored in columns c0..c1) to
// columns t0..t1.
fn apply_reflectors(a: &mut DMatrixViewMut<'_, f64>, tau: &[f64], c0: usize, c1: usize, t0: usize, t1: usize) {
    let m = a.nrows();
    let b = c1 - c0;
    let h = m - c0;
    // Unit lower trapezoidal V.
    let mut v = a.view((c0, c0), (h, b)).into_owned();
    for j in 0..b {
        for i in 0..j {
            v[(i, j)] = 0.0;
        }
        v[(j, j)] = 1.0;
    }
    let vt = v.transpose();
    let g = &vt * &v;
    let mut t = DMatrix::<f64>::zeros(b, b);
    for i in 0..b {
        t[(i, i)] = tau[c0 + i];
        if i > 0 {
            let col = -(tau[c0 + i]) * (t.view((0, 0), (i, i)) * g.view((0, i), (i, 1)));
            t.view_mut((0, i), (i, 1)).copy_from(&col);
        }
    }
    let mut c = a.view_mut((c0, t0), (h, t1 - t0));
    let w1 = &vt * &c;
    let w2 = t.transpose() * w1;
    c.gemm(-1.0, &v, &w2, 1.0);
}

// Householder reflector zeroing a[j+1.., j]; leaves beta on the diagonal,
// the reflector tail below it, and returns tau.
fn householder_column(a: &mut DMatrixViewMut<'_, f64>, j: usize) -> f64 {
    let m = a.nrows();
    let mut col = a.column_mut(j);
    let alpha = col[j];
    let xnorm = col.rows(j + 1, m - j - 1).norm();
    if xnorm == 0.0 {
        return 0.0;
    }
    let beta = -alpha.signum() * alpha.hypot(xnorm);
    let tau = (beta - alpha) / beta;
    let scale = 1.0 / (alpha - beta);
    col.rows_mut(j + 1, m - j - 1).scale_mut(scale);
    col[j] = beta;
    tau
}

/// Largest absolute entry.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// `a` with `rows` zero rows and `cols` zero columns appended.
pub fn zero_pad(a: &DMatrix<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, cols);
    let (m, n) = a.shape();
    out.view_mut((0, 0), (m, n)).copy_from(a);
    out
}

/// LU factorization with partial (row) pivoting: `P a = L U`.
#[derive(Debug, Clone)]
pub struct PivotedLu {
    lu: DMatrix<f64>,
    // Row swapped with row i at step i.
    piv: Vec<usize>,
}

impl PivotedLu {
    /// Factor a square matrix. Fails when a pivot falls below
    /// `PIVOT_TOLERANCE * max|a|`.
    pub fn factor(mut a: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(H2Error::DimensionMismatch {
                expected: n,
                got: a.ncols(),
            });
        }
        let scale = max_abs(&a);
        let tol = PIVOT_TOLERANCE * scale;
        let mut piv = vec![0usize; n];
        if n > 0 && scale == 0.0 {
            return Err(H2Error::Singular);
        }
        let mut k = 0;
        while k < n {
            let nb = LU_BLOCK.min(n - k);
            factor_panel(&mut a, k, nb, &mut piv, tol)?;
            // Swap rows outside the panel.
            for i in k..k + nb {
                let p = piv[i];
                if p != i {
                    if k > 0 {
                        swap_rows_range(&mut a, i, p, 0, k);
                    }
                    if k + nb < n {
                        swap_rows_range(&mut a, i, p, k + nb, n);
                    }
                }
            }
            let rest = n - k - nb;
            if rest > 0 {
                let l11 = a.view((k, k), (nb, nb)).into_owned();
                let mut u12 = a.view((k, k + nb), (nb, rest)).into_owned();
                unit_lower_solve(&l11, &mut u12);
                a.view_mut((k, k + nb), (nb, rest)).copy_from(&u12);
                let l21 = a.view((k + nb, k), (rest, nb)).into_owned();
                a.view_mut((k + nb, k + nb), (rest, rest))
                    .gemm(-1.0, &l21, &u12, 1.0);
            }
            k += nb;
        }
        Ok(Self { lu: a, piv })
    }

    pub fn dim(&self) -> usize {
        self.lu.nrows()
    }

    /// Number of stored reals.
    pub fn stored_len(&self) -> usize {
        self.lu.len()
    }

    /// Apply the row permutation and `L^{-1}` in place.
    pub fn forward(&self, b: &mut [f64]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        for (i, &p) in self.piv.iter().enumerate() {
            b.swap(i, p);
        }
        for j in 0..n {
            let bj = b[j];
            if bj != 0.0 {
                let col = self.lu.column(j);
                for i in j + 1..n {
                    b[i] -= col[i] * bj;
                }
            }
        }
    }

    /// Apply `U^{-1}` in place.
    pub fn backward(&self, b: &mut [f64]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        for j in (0..n).rev() {
            let col = self.lu.column(j);
            b[j] /= col[j];
            let bj = b[j];
            if bj != 0.0 {
                for i in 0..j {
                    b[i] -= col[i] * bj;
                }
            }
        }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.forward(b);
        self.backward(b);
    }

    /// Solve `A X = B` in place, column by column.
    pub fn solve_matrix(&self, b: &mut DMatrix<f64>) {
        for mut col in b.column_iter_mut() {
            self.solve_in_place(col.as_mut_slice());
        }
    }

    /// Solve `A^T X = B` in place.
    pub fn solve_transpose_matrix(&self, b: &mut DMatrix<f64>) {
        let n = self.dim();
        for mut col in b.column_iter_mut() {
            let x = col.as_mut_slice();
            // U^T w = b
            for i in 0..n {
                let ucol = self.lu.column(i);
                let mut s = x[i];
                for k in 0..i {
                    s -= ucol[k] * x[k];
                }
                x[i] = s / ucol[i];
            }
            // L^T z = w (unit diagonal)
            for i in (0..n).rev() {
                let lcol = self.lu.column(i);
                let mut s = x[i];
                for k in i + 1..n {
                    s -= lcol[k] * x[k];
                }
                x[i] = s;
            }
            // x = P^T z
            for (i, &p) in self.piv.iter().enumerate().rev() {
                x.swap(i, p);
            }
        }
    }
}

fn swap_rows_range(a: &mut DMatrix<f64>, i: usize, p: usize, c0: usize, c1: usize) {
    for c in c0..c1 {
        a.swap((i, c), (p, c));
    }
}

// Unblocked LU on columns k..k+nb, rows k..n, swapping rows inside the panel.
fn factor_panel(
    a: &mut DMatrix<f64>,
    k: usize,
    nb: usize,
    piv: &mut [usize],
    tol: f64,
) -> Result<()> {
    let n = a.nrows();
    for j in k..k + nb {
        let mut p = j;
        let mut best = a[(j, j)].abs();
        for i in j + 1..n {
            let v = a[(i, j)].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if !(best > tol) {
            return Err(H2Error::Singular);
        }
        piv[j] = p;
        if p != j {
            swap_rows_range(a, j, p, k, k + nb);
        }
        let d = a[(j, j)];
        for i in j + 1..n {
            a[(i, j)] /= d;
        }
        for c in j + 1..k + nb {
            let ajc = a[(j, c)];
            if ajc != 0.0 {
                for i in j + 1..n {
                    let lij = a[(i, j)];
                    a[(i, c)] -= lij * ajc;
                }
            }
        }
    }
    Ok(())
}

// b <- L^{-1} b with L unit lower triangular.
fn unit_lower_solve(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    for mut col in b.column_iter_mut() {
        for j in 0..n {
            let bj = col[j];
            if bj != 0.0 {
                for i in j + 1..n {
                    col[i] -= l[(i, j)] * bj;
                }
            }
        }
    }
}

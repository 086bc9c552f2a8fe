//! Kernel functions, diagonal treatment and the random low-rank overlay.

use std::f64::consts::{LN_2, PI};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{H2Error, Result};
use crate::geometry::PointSet;
use crate::rng::{normal_vec, STREAM_LOW_RANK};

/// Mean of `ln |x|` over the unit square centred at the origin.
const LOG_CELL_MEAN_2D: f64 = PI / 4.0 - LN_2 / 2.0 - 1.5;

/// Mean of `1 / |x|` over the unit cube centred at the origin.
fn inverse_distance_cell_mean_3d() -> f64 {
    3.0 * (2.0 + 3f64.sqrt()).ln() - PI / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelFamily {
    /// `exp(-|x - y| / length)`.
    ExpCovariance { length: f64 },
    /// `-(1 / 2 pi) ln |x - y|`.
    Laplace2D,
    /// `cos(kappa |x - y|) / |x - y|`.
    Helmholtz3D { kappa: f64 },
}

impl KernelFamily {
    pub fn is_singular(&self) -> bool {
        !matches!(self, KernelFamily::ExpCovariance { .. })
    }

    fn validate(&self) -> Result<()> {
        match *self {
            KernelFamily::ExpCovariance { length } if !(length > 0.0) => Err(
                H2Error::InvalidArgument(format!("correlation length must be > 0, got {length}")),
            ),
            KernelFamily::Helmholtz3D { kappa } if !(kappa >= 0.0) => Err(
                H2Error::InvalidArgument(format!("wavenumber must be >= 0, got {kappa}")),
            ),
            _ => Ok(()),
        }
    }

    /// Kernel as a function of the distance `r`; `r > 0` for singular
    /// families.
    #[inline]
    pub fn radial(&self, r: f64) -> f64 {
        match *self {
            KernelFamily::ExpCovariance { length } => (-r / length).exp(),
            KernelFamily::Laplace2D => -r.ln() / (2.0 * PI),
            KernelFamily::Helmholtz3D { kappa } => (kappa * r).cos() / r,
        }
    }

    /// Self-interaction for a point owning a grid cell of width `h`: the
    /// kernel averaged over the cell. Equals `1` for the covariance kernel.
    pub fn cell_diagonal(&self, h: f64) -> f64 {
        match *self {
            KernelFamily::ExpCovariance { .. } => 1.0,
            KernelFamily::Laplace2D => -(h.ln() + LOG_CELL_MEAN_2D) / (2.0 * PI),
            KernelFamily::Helmholtz3D { .. } => inverse_distance_cell_mean_3d() / h,
        }
    }
}

/// Random `n x r` factor `W` of the overlay `W W^T`, rows in original point
/// order, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactor {
    n: usize,
    rank: usize,
    data: Vec<f64>,
}

impl LowRankFactor {
    pub fn from_row_major(n: usize, rank: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * rank {
            return Err(H2Error::DimensionMismatch {
                expected: n * rank,
                got: data.len(),
            });
        }
        Ok(Self { n, rank, data })
    }

    /// Entries i.i.d. `N(0, 1) / sqrt(n)` from the low-rank stream of `seed`.
    pub fn random(n: usize, rank: usize, seed: u64) -> Result<Self> {
        if rank > n {
            return Err(H2Error::InvalidArgument(format!(
                "update rank {rank} exceeds n = {n}"
            )));
        }
        let scale = 1.0 / (n as f64).sqrt();
        let data = normal_vec(seed, STREAM_LOW_RANK, n * rank)
            .into_iter()
            .map(|v| v * scale)
            .collect();
        Ok(Self { n, rank, data })
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.rank..(i + 1) * self.rank]
    }

    /// `(W W^T)_{ij}`.
    #[inline]
    pub fn outer_entry(&self, i: usize, j: usize) -> f64 {
        self.row(i).iter().zip(self.row(j)).map(|(a, b)| a * b).sum()
    }

    /// Rows reordered so that row `k` of the result is row `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> LowRankFactor {
        let mut data = Vec::with_capacity(self.data.len());
        for &p in perm {
            data.extend_from_slice(self.row(p));
        }
        Self {
            n: perm.len(),
            rank: self.rank,
            data,
        }
    }

    /// Rows `range` as a dense matrix.
    pub fn block(&self, range: std::ops::Range<usize>) -> DMatrix<f64> {
        let rows = range.len();
        DMatrix::from_fn(rows, self.rank, |i, k| self.data[(range.start + i) * self.rank + k])
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        self.block(0..self.n)
    }
}

pub fn make_low_rank_factor(n: usize, rank: usize, seed: u64) -> Result<LowRankFactor> {
    LowRankFactor::random(n, rank, seed)
}

/// A kernel family with its diagonal regularization and optional overlay.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub alpha_r: f64,
    /// Value used for `K(x, x)` before regularization.
    pub diag_value: f64,
    /// Rows must follow the order of the point set passed to [`KernelSpec::entry`].
    pub overlay: Option<Arc<LowRankFactor>>,
}

impl KernelSpec {
    /// Spec with the cell-averaged diagonal for grid spacing `h`.
    pub fn new(family: KernelFamily, alpha_r: f64, h: f64) -> Result<Self> {
        family.validate()?;
        if !(alpha_r >= 0.0) {
            return Err(H2Error::InvalidArgument(format!(
                "alpha_r must be >= 0, got {alpha_r}"
            )));
        }
        if family.is_singular() && !(h > 0.0) {
            return Err(H2Error::InvalidArgument(
                "singular kernels need a positive grid spacing".into(),
            ));
        }
        Ok(Self {
            family,
            alpha_r,
            diag_value: family.cell_diagonal(h),
            overlay: None,
        })
    }

    /// Spec whose diagonal uses the minimum spacing of `points`.
    pub fn for_points(family: KernelFamily, alpha_r: f64, points: &PointSet) -> Result<Self> {
        let h = points.min_spacing();
        let h = if h.is_finite() { h } else { 1.0 };
        Self::new(family, alpha_r, h)
    }

    pub fn with_overlay(mut self, overlay: Option<Arc<LowRankFactor>>) -> Self {
        self.overlay = overlay;
        self
    }

    /// Copy whose overlay rows are permuted by `perm` (see
    /// [`LowRankFactor::permuted`]).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut s = self.clone();
        s.overlay = self.overlay.as_ref().map(|w| Arc::new(w.permuted(perm)));
        s
    }

    /// `K(x, y)` for distinct points. Coincident points fall back to the
    /// unregularized diagonal value.
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let r = distance(x, y);
        if r == 0.0 && self.family.is_singular() {
            return self.diag_value;
        }
        self.family.radial(r)
    }

    /// Entry of the base matrix (no overlay).
    #[inline]
    pub fn base_entry(&self, points: &PointSet, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag_value + self.alpha_r
        } else {
            self.eval(points.point(i), points.point(j))
        }
    }

    /// Matrix entry `A_{ij}` including regularization and overlay.
    #[inline]
    pub fn entry(&self, points: &PointSet, i: usize, j: usize) -> f64 {
        let base = self.base_entry(points, i, j);
        match &self.overlay {
            Some(w) => base + w.outer_entry(i, j),
            None => base,
        }
    }
}

#[inline]
pub(crate) fn distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn analytic_values() {
        let cov = KernelSpec::new(KernelFamily::ExpCovariance { length: 0.1 }, 0.0, 1.0).unwrap();
        assert!(approx(cov.eval(&[0.0, 0.0], &[0.1, 0.0]), (-1.0f64).exp(), 1e-15));
        let lap = KernelSpec::new(KernelFamily::Laplace2D, 0.0, 0.01).unwrap();
        assert_eq!(lap.eval(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        let helm = KernelSpec::new(KernelFamily::Helmholtz3D { kappa: 3.0 }, 0.0, 0.01).unwrap();
        assert!(approx(helm.eval(&[0.0; 3], &[PI / 6.0, 0.0, 0.0]), 0.0, 1e-15));
    }

    #[test]
    fn covariance_diagonal() {
        let pts = PointSet::new(2, vec![0.1, 0.1, 0.2, 0.1]).unwrap();
        let cov =
            KernelSpec::for_points(KernelFamily::ExpCovariance { length: 0.1 }, 1e-2, &pts).unwrap();
        assert!(approx(cov.entry(&pts, 0, 0), 1.01, 1e-15));
        assert!(approx(cov.entry(&pts, 0, 1), (-1.0f64).exp(), 1e-15));
    }

    #[test]
    fn singular_diagonals() {
        let h = 1.0 / 128.0;
        let helm = KernelFamily::Helmholtz3D { kappa: 3.0 }.cell_diagonal(h);
        assert!(approx(helm * h, 2.380_077_7, 1e-6));
        // Mean of ln|x| over [-1/2, 1/2]^2 by a midpoint rule.
        let q = 400;
        let mut acc = 0.0;
        for a in 0..q {
            for b in 0..q {
                let x = (a as f64 + 0.5) / q as f64 - 0.5;
                let y = (b as f64 + 0.5) / q as f64 - 0.5;
                acc += (x * x + y * y).sqrt().ln();
            }
        }
        assert!(approx(acc / (q * q) as f64, LOG_CELL_MEAN_2D, 1e-4));
    }

    #[test]
    fn invalid_parameters() {
        assert!(KernelSpec::new(KernelFamily::ExpCovariance { length: 0.0 }, 0.0, 1.0).is_err());
        assert!(KernelSpec::new(KernelFamily::Helmholtz3D { kappa: -1.0 }, 0.0, 1.0).is_err());
        assert!(KernelSpec::new(KernelFamily::Laplace2D, -1.0, 1.0).is_err());
        assert!(KernelSpec::new(KernelFamily::Laplace2D, 0.0, 0.0).is_err());
        assert!(LowRankFactor::random(3, 4, 0).is_err());
    }

    #[test]
    fn overlay_adds_outer_product() {
        let pts = crate::geometry::generate_uniform_grid(64, 2).unwrap();
        let w = Arc::new(LowRankFactor::random(64, 32, 7).unwrap());
        let base =
            KernelSpec::for_points(KernelFamily::ExpCovariance { length: 0.1 }, 1e-2, &pts).unwrap();
        let spec = base.clone().with_overlay(Some(w.clone()));
        for &(i, j) in &[(0, 0), (3, 17), (63, 5)] {
            let direct: f64 = (0..32).map(|k| w.row(i)[k] * w.row(j)[k]).sum();
            assert!(approx(spec.entry(&pts, i, j) - base.entry(&pts, i, j), direct, 1e-15));
            assert_eq!(spec.entry(&pts, i, j), spec.entry(&pts, j, i));
        }
    }

    #[test]
    fn low_rank_factor_is_deterministic() {
        let a = LowRankFactor::random(100, 4, 9).unwrap();
        let b = LowRankFactor::random(100, 4, 9).unwrap();
        let c = LowRankFactor::random(100, 4, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(LowRankFactor::random(10, 0, 1).unwrap().rank(), 0);
        let perm: Vec<usize> = (0..100).rev().collect();
        assert_eq!(a.permuted(&perm).row(0), a.row(99));
    }
}

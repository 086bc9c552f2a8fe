//! Symmetric H² matrices: Chebyshev construction, orthogonalization,
//! weighted recompression, matvec and low-rank update absorption.

pub mod blocks;
pub mod chebyshev;

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};
use rayon::prelude::*;

use crate::dense::{sorted_svd, thin_qr};
use crate::error::{H2Error, Result};
use crate::geometry::ClusterTree;
use crate::kernels::{KernelSpec, LowRankFactor};
use crate::rng::{normal_vec, STREAM_POWER_ITERATION};
use crate::structure::BlockPartition;

pub use blocks::{BlockRef, SymmetricBlocks};
pub use chebyshev::{chebyshev_grid, chebyshev_nodes, interpolation_matrix};

/// Power iterations used by [`H2Matrix::estimate_norm2`].
pub const NORM_ITERATIONS: usize = 30;
const NORM_SEED: u64 = 0x6e6f726d;

/// Interpolation order at `level` for a tree of depth `depth`: `p0` at the
/// leaves, one more for every two levels towards the root.
pub fn order_schedule(p0: usize, depth: usize, level: usize) -> usize {
    p0 + (depth - level) / 2
}

/// Symmetric H² matrix in tree order.
///
/// `bases[l][i]` is the leaf basis `V_i` on the leaf level and the stacked
/// transfer `[T_c1; T_c2]` (children's rank rows, own rank columns) on
/// levels `top..depth`. Levels above the top level carry no basis.
#[derive(Debug, Clone)]
pub struct H2Matrix {
    tree: ClusterTree,
    partition: BlockPartition,
    orders: Vec<usize>,
    bases: Vec<Vec<DMatrix<f64>>>,
    couplings: Vec<SymmetricBlocks>,
    dense: SymmetricBlocks,
}

fn cluster_coords(tree: &ClusterTree, level: usize, i: usize) -> &[f64] {
    let c = tree.cluster(level, i);
    let d = tree.dim();
    &tree.points().coords()[c.begin * d..c.end * d]
}

fn vstack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = top.ncols().max(bottom.ncols());
    debug_assert!(top.nrows() == 0 || bottom.nrows() == 0 || top.ncols() == bottom.ncols());
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), cols);
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out.view_mut((top.nrows(), 0), bottom.shape()).copy_from(bottom);
    out
}

impl H2Matrix {
    /// Chebyshev-interpolation H² matrix of the base kernel (no overlay;
    /// see [`H2Matrix::absorb_low_rank`]). Bases are not orthogonal.
    pub fn build(
        tree: ClusterTree,
        partition: BlockPartition,
        spec: &KernelSpec,
        p0: usize,
    ) -> Result<Self> {
        if p0 == 0 {
            return Err(H2Error::InvalidArgument("p0 must be >= 1".into()));
        }
        if partition.depth() != tree.depth() {
            return Err(H2Error::DimensionMismatch {
                expected: tree.depth(),
                got: partition.depth(),
            });
        }
        let depth = tree.depth();
        let orders: Vec<usize> = (0..=depth).map(|l| order_schedule(p0, depth, l)).collect();
        let mut bases: Vec<Vec<DMatrix<f64>>> = vec![Vec::new(); depth + 1];
        let mut couplings = vec![SymmetricBlocks::new(); depth + 1];
        let dim = tree.dim();

        if let Some(top) = partition.top_level() {
            let grids: Vec<Vec<Vec<f64>>> = (0..=depth)
                .map(|l| {
                    if l < top {
                        return Vec::new();
                    }
                    tree.level(l)
                        .par_iter()
                        .map(|c| chebyshev_grid(&c.bbox, orders[l]))
                        .collect()
                })
                .collect();
            bases[depth] = (0..tree.level(depth).len())
                .into_par_iter()
                .map(|i| {
                    let c = tree.cluster(depth, i);
                    interpolation_matrix(cluster_coords(&tree, depth, i), &c.bbox, orders[depth])
                })
                .collect();
            for l in top..depth {
                bases[l] = (0..tree.level(l).len())
                    .into_par_iter()
                    .map(|i| {
                        let bbox = &tree.cluster(l, i).bbox;
                        let [c1, c2] = tree.cluster(l, i).children();
                        let t1 = interpolation_matrix(&grids[l + 1][c1], bbox, orders[l]);
                        let t2 = interpolation_matrix(&grids[l + 1][c2], bbox, orders[l]);
                        vstack(&t1, &t2)
                    })
                    .collect();
            }
            for l in top..=depth {
                let pairs: Vec<(usize, usize)> = partition
                    .admissible_pairs(l)
                    .into_iter()
                    .filter(|&(s, t)| s < t)
                    .collect();
                couplings[l] = pairs
                    .into_par_iter()
                    .map(|(s, t)| {
                        let (gs, gt) = (&grids[l][s], &grids[l][t]);
                        let (ks, kt) = (gs.len() / dim, gt.len() / dim);
                        let block = DMatrix::from_fn(ks, kt, |a, b| {
                            spec.eval(&gs[a * dim..(a + 1) * dim], &gt[b * dim..(b + 1) * dim])
                        });
                        ((s, t), block)
                    })
                    .collect::<Vec<_>>()
                    .into_iter()
                    .collect();
            }
        }

        let points = tree.points();
        let leaves = tree.leaves();
        let dense = partition
            .dense_leaves()
            .into_par_iter()
            .filter(|&(s, t)| s <= t)
            .map(|(s, t)| {
                let (cs, ct) = (&leaves[s], &leaves[t]);
                let block = DMatrix::from_fn(cs.len(), ct.len(), |a, b| {
                    spec.base_entry(points, cs.begin + a, ct.begin + b)
                });
                ((s, t), block)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect();

        Ok(Self {
            tree,
            partition,
            orders,
            bases,
            couplings,
            dense,
        })
    }

    pub fn tree(&self) -> &ClusterTree {
        &self.tree
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn size(&self) -> usize {
        self.tree.num_points()
    }

    pub fn depth(&self) -> usize {
        self.tree.depth()
    }

    pub fn top_level(&self) -> Option<usize> {
        self.partition.top_level()
    }

    /// Chebyshev order used at `level` during construction.
    pub fn order(&self, level: usize) -> usize {
        self.orders[level]
    }

    fn has_basis(&self, level: usize) -> bool {
        self.top_level().is_some_and(|t| level >= t)
    }

    pub fn rank(&self, level: usize, i: usize) -> usize {
        if self.has_basis(level) {
            self.bases[level][i].ncols()
        } else {
            0
        }
    }

    pub fn level_ranks(&self, level: usize) -> Vec<usize> {
        (0..self.tree.level(level).len()).map(|i| self.rank(level, i)).collect()
    }

    pub fn max_rank_at(&self, level: usize) -> usize {
        self.level_ranks(level).into_iter().max().unwrap_or(0)
    }

    pub fn max_rank(&self) -> usize {
        (0..=self.depth()).map(|l| self.max_rank_at(l)).max().unwrap_or(0)
    }

    /// Leaf basis on the leaf level, stacked transfer above it.
    pub fn basis(&self, level: usize, i: usize) -> &DMatrix<f64> {
        &self.bases[level][i]
    }

    /// Transfer `T_c` of cluster `c` at `level` (`k_c x k_parent`), a row
    /// block of the parent's stack.
    pub fn transfer(&self, level: usize, c: usize) -> DMatrixView<'_, f64> {
        let stack = &self.bases[level - 1][c / 2];
        let k1 = self.rank(level, c & !1);
        let kc = self.rank(level, c);
        let start = if c % 2 == 0 { 0 } else { k1 };
        stack.rows(start, kc)
    }

    pub fn coupling(&self, level: usize, s: usize, t: usize) -> Option<BlockRef<'_>> {
        self.couplings[level].get(s, t)
    }

    pub fn couplings(&self, level: usize) -> &SymmetricBlocks {
        &self.couplings[level]
    }

    pub fn dense_block(&self, s: usize, t: usize) -> Option<BlockRef<'_>> {
        self.dense.get(s, t)
    }

    pub fn dense_blocks(&self) -> &SymmetricBlocks {
        &self.dense
    }

    /// Stored reals across bases, transfers, couplings and dense leaves.
    pub fn stored_len(&self) -> usize {
        let b: usize = self.bases.iter().flatten().map(|m| m.len()).sum();
        let c: usize = self.couplings.iter().map(|c| c.stored_len()).sum();
        b + c + self.dense.stored_len()
    }

    pub fn stored_bytes(&self) -> usize {
        self.stored_len() * std::mem::size_of::<f64>()
    }

    /// Largest `||Q^T Q - I||_F / max(k, 1)` over leaf bases and transfer
    /// stacks.
    pub fn orthonormality_defect(&self) -> f64 {
        self.bases
            .iter()
            .flatten()
            .map(|q| {
                let k = q.ncols();
                let g = q.transpose() * q - DMatrix::<f64>::identity(k, k);
                g.norm() / k.max(1) as f64
            })
            .fold(0.0, f64::max)
    }

    /// Replaces every basis by an orthonormal one (bottom-up QR) and folds
    /// the triangular factors into the parent transfers and the couplings.
    pub fn orthogonalize(&mut self) {
        let Some(top) = self.top_level() else { return };
        let depth = self.depth();
        let mut r_factors: Vec<Vec<DMatrix<f64>>> = vec![Vec::new(); depth + 1];
        for l in (top..=depth).rev() {
            let old = std::mem::take(&mut self.bases[l]);
            let child_r = if l < depth { &r_factors[l + 1] } else { &r_factors[l] };
            let (qs, rs): (Vec<_>, Vec<_>) = old
                .into_par_iter()
                .enumerate()
                .map(|(i, b)| {
                    let m = if l == depth {
                        b
                    } else {
                        let (r1, r2) = (&child_r[2 * i], &child_r[2 * i + 1]);
                        let k1 = r1.ncols();
                        let top_rows = r1 * b.rows(0, k1);
                        let bottom_rows = r2 * b.rows(k1, r2.ncols());
                        vstack(&top_rows, &bottom_rows)
                    };
                    thin_qr(m)
                })
                .unzip();
            self.bases[l] = qs;
            r_factors[l] = rs;
        }
        for l in top..=depth {
            let r = &r_factors[l];
            self.couplings[l].par_iter_mut().for_each(|(&(s, t), block)| {
                *block = &r[s] * &*block * r[t].transpose();
            });
        }
    }

    /// Orthogonalize, truncate each cluster basis against its total weight
    /// (keeping singular values above `eps` times the largest), then
    /// re-orthogonalize.
    pub fn orthogonalize_recompress(&mut self, eps: f64) {
        self.orthogonalize();
        self.truncate(eps);
        self.orthogonalize();
    }

    fn truncate(&mut self, eps: f64) {
        let Some(top) = self.top_level() else { return };
        let depth = self.depth();
        let mut projections: Vec<Vec<DMatrix<f64>>> = vec![Vec::new(); depth + 1];
        let mut parent_weights: Vec<DMatrix<f64>> = Vec::new();
        for l in top..=depth {
            let this = &*self;
            let (ps, zs): (Vec<_>, Vec<_>) = (0..this.tree.level(l).len())
                .into_par_iter()
                .map(|i| {
                    let k = this.rank(l, i);
                    let mut pieces: Vec<DMatrix<f64>> = this
                        .partition
                        .admissible_neighbors(l, i)
                        .iter()
                        .map(|&x| this.couplings[l].get(i, x).unwrap().to_matrix().transpose())
                        .collect();
                    if l > top {
                        let tz = this.transfer(l, i) * &parent_weights[i / 2];
                        pieces.push(tz.transpose());
                    }
                    let rows: usize = pieces.iter().map(|p| p.nrows()).sum();
                    let mut stacked = DMatrix::zeros(rows, k);
                    let mut at = 0;
                    for p in &pieces {
                        stacked.view_mut((at, 0), p.shape()).copy_from(p);
                        at += p.nrows();
                    }
                    let (_, r) = thin_qr(stacked);
                    let z = r.transpose();
                    let (u, sigma, _) = sorted_svd(z.clone());
                    let keep = match sigma.first() {
                        Some(&s0) if s0 > 0.0 => sigma.iter().filter(|&&s| s > eps * s0).count(),
                        _ => 0,
                    };
                    (u.columns(0, keep).into_owned(), z)
                })
                .unzip();
            projections[l] = ps;
            parent_weights = zs;
        }

        for l in top..=depth {
            let p = &projections[l];
            let bases = std::mem::take(&mut self.bases[l]);
            self.bases[l] = if l == depth {
                bases.into_par_iter().enumerate().map(|(i, v)| v * &p[i]).collect()
            } else {
                let pc = &projections[l + 1];
                bases
                    .into_par_iter()
                    .enumerate()
                    .map(|(i, stack)| {
                        let (c1, c2) = (2 * i, 2 * i + 1);
                        let k1 = pc[c1].nrows();
                        let t1 = pc[c1].transpose() * stack.rows(0, k1) * &p[i];
                        let t2 = pc[c2].transpose() * stack.rows(k1, pc[c2].nrows()) * &p[i];
                        vstack(&t1, &t2)
                    })
                    .collect()
            };
            self.couplings[l].par_iter_mut().for_each(|(&(s, t), block)| {
                *block = p[s].transpose() * &*block * &p[t];
            });
        }
    }

    /// Adds `W W^T` (rows of `w` in original point order): dense leaves get
    /// the restricted products, bases are augmented with `W`, transfers and
    /// couplings with identity blocks; then recompresses to `eps`.
    pub fn absorb_low_rank(&mut self, w: &LowRankFactor, eps: f64) -> Result<()> {
        if w.rows() != self.size() {
            return Err(H2Error::DimensionMismatch {
                expected: self.size(),
                got: w.rows(),
            });
        }
        let r = w.rank();
        if r == 0 {
            return Ok(());
        }
        let wt = w.permuted(self.tree.perm());
        let leaves = self.tree.leaves().to_vec();
        self.dense.par_iter_mut().for_each(|(&(s, t), block)| {
            let ws = wt.block(leaves[s].range());
            let wtt = wt.block(leaves[t].range());
            block.gemm(1.0, &ws, &wtt.transpose(), 1.0);
        });
        let Some(top) = self.top_level() else { return Ok(()) };
        let depth = self.depth();
        for l in (top..=depth).rev() {
            let bases = std::mem::take(&mut self.bases[l]);
            let all = &self.bases;
            let augmented = bases
                .into_par_iter()
                .enumerate()
                .map(|(i, b)| {
                    if l == depth {
                        let wl = wt.block(leaves[i].range());
                        let mut v = DMatrix::zeros(b.nrows(), b.ncols() + r);
                        v.view_mut((0, 0), b.shape()).copy_from(&b);
                        v.view_mut((0, b.ncols()), wl.shape()).copy_from(&wl);
                        v
                    } else {
                        // Children one level down are already augmented.
                        let k1 = all[l + 1][2 * i].ncols() - r;
                        let k2 = b.nrows() - k1;
                        let k = b.ncols();
                        let mut s = DMatrix::zeros(k1 + k2 + 2 * r, k + r);
                        s.view_mut((0, 0), (k1, k)).copy_from(&b.rows(0, k1));
                        s.view_mut((k1, k), (r, r)).fill_with_identity();
                        s.view_mut((k1 + r, 0), (k2, k)).copy_from(&b.rows(k1, k2));
                        s.view_mut((k1 + r + k2, k), (r, r)).fill_with_identity();
                        s
                    }
                })
                .collect();
            self.bases[l] = augmented;
            self.couplings[l].par_iter_mut().for_each(|(_, block)| {
                let (a, b) = block.shape();
                let mut s = DMatrix::zeros(a + r, b + r);
                s.view_mut((0, 0), (a, b)).copy_from(&*block);
                s.view_mut((a, b), (r, r)).fill_with_identity();
                *block = s;
            });
        }
        self.orthogonalize_recompress(eps);
        Ok(())
    }

    /// `y = A x` with `x` and `y` in tree order.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.size();
        if x.len() != n {
            return Err(H2Error::DimensionMismatch {
                expected: n,
                got: x.len(),
            });
        }
        let depth = self.depth();
        let leaves = self.tree.leaves();
        let mut yhat_leaf: Vec<DVector<f64>> = Vec::new();
        if let Some(top) = self.top_level() {
            let mut xhat: Vec<Vec<DVector<f64>>> = vec![Vec::new(); depth + 1];
            xhat[depth] = (0..leaves.len())
                .into_par_iter()
                .map(|i| {
                    let xi = DVectorView::from_slice(&x[leaves[i].range()], leaves[i].len());
                    self.bases[depth][i].tr_mul(&xi)
                })
                .collect();
            for l in (top..depth).rev() {
                let below = &xhat[l + 1];
                xhat[l] = (0..self.tree.level(l).len())
                    .into_par_iter()
                    .map(|i| {
                        let stacked = vstack_vec(&below[2 * i], &below[2 * i + 1]);
                        self.bases[l][i].tr_mul(&stacked)
                    })
                    .collect();
            }
            let mut yhat: Vec<DVector<f64>> = Vec::new();
            for l in top..=depth {
                let mut level_y: Vec<DVector<f64>> = (0..self.tree.level(l).len())
                    .into_par_iter()
                    .map(|s| {
                        let mut y = DVector::zeros(self.rank(l, s));
                        for &t in self.partition.admissible_neighbors(l, s) {
                            self.couplings[l].get(s, t).unwrap().gemv_add(
                                y.as_view_mut(),
                                1.0,
                                xhat[l][t].as_view(),
                            );
                        }
                        y
                    })
                    .collect();
                if l > top {
                    level_y.par_iter_mut().enumerate().for_each(|(c, y)| {
                        let parent = &yhat[c / 2];
                        if parent.is_empty() {
                            return;
                        }
                        let t = self.transfer(l, c);
                        y.gemv(1.0, &t, parent, 1.0);
                    });
                }
                yhat = level_y;
            }
            yhat_leaf = yhat;
        }
        let parts: Vec<Vec<f64>> = (0..leaves.len())
            .into_par_iter()
            .map(|i| {
                let mut y = DVector::zeros(leaves[i].len());
                if let Some(yh) = yhat_leaf.get(i) {
                    y.gemv(1.0, &self.bases[depth][i], yh, 0.0);
                }
                for &j in self.partition.inadmissible_neighbors(depth, i) {
                    let xj = DVectorView::from_slice(&x[leaves[j].range()], leaves[j].len());
                    self.dense.get(i, j).unwrap().gemv_add(y.as_view_mut(), 1.0, xj);
                }
                y.as_slice().to_vec()
            })
            .collect();
        Ok(parts.concat())
    }

    /// 2-norm estimate `||A x|| / ||x||` after a fixed number of power
    /// iterations from a seeded Gaussian start vector. A lower bound on
    /// `||A||_2`.
    pub fn estimate_norm2(&self) -> f64 {
        let n = self.size();
        let mut x = DVector::from_vec(normal_vec(NORM_SEED, STREAM_POWER_ITERATION, n));
        let nx = x.norm();
        x /= nx;
        let mut est = 0.0;
        for _ in 0..NORM_ITERATIONS {
            let y = DVector::from_vec(self.matvec(x.as_slice()).expect("length matches"));
            est = y.norm();
            if est == 0.0 {
                break;
            }
            x = y / est;
        }
        est
    }
}

fn vstack_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut v = DVector::zeros(a.len() + b.len());
    v.rows_mut(0, a.len()).copy_from(a);
    v.rows_mut(a.len(), b.len()).copy_from(b);
    v
}

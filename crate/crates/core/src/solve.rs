//! Solve with a [`Factorization`]: forward sweep up the levels, dense top
//! solve, backward sweep down. Vectors are in tree order.

use nalgebra::{DMatrix, DVector, DVectorView};
use rayon::prelude::*;

use crate::error::{H2Error, Result};
use crate::factorization::{ClusterFactor, Factorization, LevelFactor};

/// One level of the vector tree: cluster segments stored back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelVector {
    pub level: usize,
    pub offsets: Vec<usize>,
    pub data: Vec<f64>,
}

impl LevelVector {
    pub fn zeros(level: usize, sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        for &s in sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        let len = *offsets.last().unwrap();
        Self {
            level,
            offsets,
            data: vec![0.0; len],
        }
    }

    pub fn segment(&self, i: usize) -> &[f64] {
        &self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn segment_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn num_segments(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Per-level segmented vectors, leaf level first, top level last.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeVector {
    pub levels: Vec<LevelVector>,
}

impl TreeVector {
    /// Zero vector tree shaped after `z`.
    pub fn for_factorization(z: &Factorization) -> Self {
        let mut levels: Vec<LevelVector> = z
            .levels
            .iter()
            .map(|lf| LevelVector::zeros(lf.level, &lf.entry_live))
            .collect();
        let sizes: Vec<usize> = z.top.offsets.windows(2).map(|w| w[1] - w[0]).collect();
        levels.push(LevelVector::zeros(z.top.level, &sizes));
        Self { levels }
    }

    pub fn leaf(&self) -> &LevelVector {
        &self.levels[0]
    }
}

// New segment of `c` after the forward rotation, and the updates it sends
// to its neighbours.
fn forward_cluster(c: &ClusterFactor, seg: &[f64]) -> (Vec<f64>, Vec<DVector<f64>>) {
    let s = DVectorView::from_slice(seg, seg.len());
    let rotated = c.q.tr_mul(&s);
    let br = rotated.rows(0, c.r);
    let updates = c
        .entries
        .iter()
        .map(|e| {
            if c.r == 0 {
                DVector::zeros(0)
            } else {
                c.x.columns(e.col, e.width).tr_mul(&br)
            }
        })
        .collect();
    (rotated.as_slice().to_vec(), updates)
}

/// Applies `L_tau^{-1} Q_tau^T` of every cluster of one colour to the level
/// vector. Neighbour updates are applied in cluster order.
pub fn apply_forward(color: &[ClusterFactor], v: &mut LevelVector) {
    let work: Vec<(Vec<f64>, Vec<DVector<f64>>)> = color
        .par_iter()
        .map(|c| forward_cluster(c, v.segment(c.cluster)))
        .collect();
    for (c, (seg, updates)) in color.iter().zip(work) {
        v.segment_mut(c.cluster).copy_from_slice(&seg);
        if c.r == 0 {
            continue;
        }
        for (e, u) in c.entries.iter().zip(updates) {
            let dst = &mut v.segment_mut(e.cluster)[e.seg_off..e.seg_off + e.width];
            for (d, x) in dst.iter_mut().zip(u.iter()) {
                *d -= x;
            }
        }
    }
}

/// Undoes [`apply_forward`] for the solution: `x_R -= X x_N`, then rotate
/// back with `Q_tau`.
pub fn apply_backward(color: &[ClusterFactor], v: &mut LevelVector) {
    let segs: Vec<Vec<f64>> = color
        .par_iter()
        .map(|c| {
            let own = v.segment(c.cluster);
            let mut seg = DVector::from_column_slice(own);
            if c.r > 0 {
                let mut acc = DVector::zeros(c.r);
                for e in &c.entries {
                    let xs = &v.segment(e.cluster)[e.seg_off..e.seg_off + e.width];
                    acc.gemv(1.0, &c.x.columns(e.col, e.width), &DVectorView::from_slice(xs, e.width), 1.0);
                }
                let mut head = seg.rows_mut(0, c.r);
                head -= acc;
            }
            (&c.q * seg).as_slice().to_vec()
        })
        .collect();
    for (c, seg) in color.iter().zip(segs) {
        v.segment_mut(c.cluster).copy_from_slice(&seg);
    }
}

fn for_each_factor(lf: &LevelFactor, v: &mut LevelVector, f: impl Fn(&ClusterFactor, &mut [f64]) + Sync) {
    // Each cluster touches only its own segment.
    let mut by_cluster: Vec<Option<&ClusterFactor>> = vec![None; v.num_segments()];
    for c in lf.colors.iter().flatten() {
        by_cluster[c.cluster] = Some(c);
    }
    let mut segs: Vec<&mut [f64]> = Vec::with_capacity(v.num_segments());
    let mut rest = v.data.as_mut_slice();
    for w in v.offsets.windows(2) {
        let (head, tail) = rest.split_at_mut(w[1] - w[0]);
        segs.push(head);
        rest = tail;
    }
    segs.into_par_iter().zip(by_cluster).for_each(|(seg, c)| {
        if let Some(c) = c {
            f(c, seg);
        }
    });
}

/// Row permutation and `L_RR^{-1}` on every redundant sub-segment.
pub fn diagonal_forward(lf: &LevelFactor, v: &mut LevelVector) {
    for_each_factor(lf, v, |c, seg| {
        if let Some(lu) = &c.lu {
            lu.forward(&mut seg[..c.r]);
        }
    });
}

/// `U_RR^{-1}` on every redundant sub-segment.
pub fn diagonal_backward(lf: &LevelFactor, v: &mut LevelVector) {
    for_each_factor(lf, v, |c, seg| {
        if let Some(lu) = &c.lu {
            lu.backward(&mut seg[..c.r]);
        }
    });
}

/// Gathers the skeleton tails of the children into the parent segments.
pub fn upsweep(lf: &LevelFactor, v: &LevelVector, parent: &mut LevelVector) {
    let idx = lf.skeleton_indices();
    assert_eq!(idx.len(), parent.data.len(), "parent level size");
    for (dst, &i) in parent.data.iter_mut().zip(&idx) {
        *dst = v.data[i];
    }
}

/// Scatters the parent segments back into the children's skeleton tails.
pub fn downsweep(lf: &LevelFactor, parent: &LevelVector, v: &mut LevelVector) {
    let idx = lf.skeleton_indices();
    assert_eq!(idx.len(), parent.data.len(), "parent level size");
    for (&src, &i) in parent.data.iter().zip(&idx) {
        v.data[i] = src;
    }
}

/// Solves `A x = b` (tree order).
pub fn solve(z: &Factorization, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != z.n {
        return Err(H2Error::DimensionMismatch {
            expected: z.n,
            got: b.len(),
        });
    }
    let mut tv = TreeVector::for_factorization(z);
    tv.levels[0].data.copy_from_slice(b);
    let nl = z.levels.len();
    for (li, lf) in z.levels.iter().enumerate() {
        let (below, above) = tv.levels.split_at_mut(li + 1);
        let v = &mut below[li];
        for color in &lf.colors {
            apply_forward(color, v);
        }
        diagonal_forward(lf, v);
        upsweep(lf, v, &mut above[0]);
    }
    z.top.lu.solve_in_place(&mut tv.levels[nl].data);
    for li in (0..nl).rev() {
        let lf = &z.levels[li];
        let (below, above) = tv.levels.split_at_mut(li + 1);
        let v = &mut below[li];
        downsweep(lf, &above[0], v);
        diagonal_backward(lf, v);
        for color in lf.colors.iter().rev() {
            apply_backward(color, v);
        }
    }
    Ok(std::mem::take(&mut tv.levels[0].data))
}

/// Solves for every column of the `n x q` matrix `b`.
pub fn solve_many(z: &Factorization, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() != z.n {
        return Err(H2Error::DimensionMismatch {
            expected: z.n,
            got: b.nrows(),
        });
    }
    let cols = (0..b.ncols())
        .map(|j| solve(z, b.column(j).as_slice()))
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| cols[j][i]))
}

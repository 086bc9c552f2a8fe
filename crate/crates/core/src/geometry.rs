//! Point sets, bounding boxes and the KD cluster tree.

use crate::error::{H2Error, Result};

/// `n` points in `[0,1]^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(H2Error::InvalidArgument(format!(
                "dimension must be 2 or 3, got {dim}"
            )));
        }
        if coords.is_empty() || coords.len() % dim != 0 {
            return Err(H2Error::InvalidArgument(
                "coordinate array must hold at least one point".into(),
            ));
        }
        if coords.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(H2Error::InvalidArgument(
                "coordinates must lie in the unit box".into(),
            ));
        }
        Ok(Self { dim, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Points reordered so that position `i` holds `self.point(perm[i])`.
    pub fn permuted(&self, perm: &[usize]) -> PointSet {
        let mut coords = Vec::with_capacity(self.coords.len());
        for &p in perm {
            coords.extend_from_slice(self.point(p));
        }
        PointSet {
            dim: self.dim,
            coords,
        }
    }

    /// Smallest spacing between distinct coordinates along any axis.
    pub fn min_spacing(&self) -> f64 {
        let mut best = f64::INFINITY;
        for axis in 0..self.dim {
            let mut vals: Vec<f64> = (0..self.len()).map(|i| self.point(i)[axis]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                best = best.min(w[1] - w[0]);
            }
        }
        if best.is_finite() {
            best
        } else {
            1.0
        }
    }
}

/// Axis counts for an `n`-point grid in `d` dimensions: the most balanced
/// factorization with non-increasing counts.
pub fn grid_axis_counts(n: usize, d: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(H2Error::InvalidArgument("point count must be positive".into()));
    }
    if !(d == 2 || d == 3) {
        return Err(H2Error::InvalidArgument(format!(
            "dimension must be 2 or 3, got {d}"
        )));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut consider = |counts: Vec<usize>| {
        let ratio = counts[0] as f64 / *counts.last().unwrap() as f64;
        if best.as_ref().is_none_or(|(r, _)| ratio < *r) {
            best = Some((ratio, counts));
        }
    };
    let divisors: Vec<usize> = (1..=n).filter(|a| n % a == 0).collect();
    for &a in divisors.iter().rev() {
        let rest = n / a;
        if d == 2 {
            if a >= rest {
                consider(vec![a, rest]);
            }
        } else {
            for &b in divisors.iter().rev() {
                if b > a || rest % b != 0 {
                    continue;
                }
                let c = rest / b;
                if c <= b {
                    consider(vec![a, b, c]);
                }
            }
        }
    }
    Ok(best.expect("n has at least the trivial factorization").1)
}

/// Uniform grid of cell centres in `[0,1]^d`, lexicographic with axis 0
/// varying slowest.
pub fn generate_uniform_grid(n: usize, d: usize) -> Result<PointSet> {
    let counts = grid_axis_counts(n, d)?;
    let mut coords = Vec::with_capacity(n * d);
    let mut idx = vec![0usize; d];
    for _ in 0..n {
        for axis in 0..d {
            coords.push((idx[axis] as f64 + 0.5) / counts[axis] as f64);
        }
        for axis in (0..d).rev() {
            idx[axis] += 1;
            if idx[axis] < counts[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
    PointSet::new(d, coords)
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundingBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        debug_assert_eq!(lo.len(), hi.len());
        debug_assert!(lo.iter().zip(&hi).all(|(l, h)| l <= h));
        Self { lo, hi }
    }

    /// Tight box of the points at `indices`.
    pub fn of_points<'a>(points: &PointSet, indices: impl IntoIterator<Item = &'a usize>) -> Self {
        let d = points.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &i in indices {
            for (axis, &c) in points.point(i).iter().enumerate() {
                lo[axis] = lo[axis].min(c);
                hi[axis] = hi[axis].max(c);
            }
        }
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    /// Euclidean length of the diagonal.
    pub fn diameter(&self) -> f64 {
        (0..self.dim()).map(|a| self.width(a).powi(2)).sum::<f64>().sqrt()
    }

    /// Euclidean distance between the boxes as point sets (0 when they touch
    /// or overlap).
    pub fn distance(&self, other: &BoundingBox) -> f64 {
        (0..self.dim())
            .map(|a| {
                let gap = (other.lo[a] - self.hi[a]).max(self.lo[a] - other.hi[a]).max(0.0);
                gap * gap
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Euclidean distance between the box centres.
    pub fn center_distance(&self, other: &BoundingBox) -> f64 {
        (0..self.dim())
            .map(|a| {
                let c = 0.5 * (self.lo[a] + self.hi[a]) - 0.5 * (other.lo[a] + other.hi[a]);
                c * c
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .enumerate()
            .all(|(a, &c)| c >= self.lo[a] && c <= self.hi[a])
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        (0..self.dim()).all(|a| other.lo[a] >= self.lo[a] && other.hi[a] <= self.hi[a])
    }

    fn widest_axis(&self) -> usize {
        let mut best = 0;
        for a in 1..self.dim() {
            if self.width(a) > self.width(best) {
                best = a;
            }
        }
        best
    }
}

/// A node of the cluster tree. Clusters are addressed by `(level, index)`;
/// the children of `(l, i)` are `(l + 1, 2i)` and `(l + 1, 2i + 1)`.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub level: usize,
    pub index: usize,
    pub begin: usize,
    pub end: usize,
    pub bbox: BoundingBox,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.end - self.begin
    }

    pub fn is_empty(&self) -> bool {
        self.begin == self.end
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.begin..self.end
    }

    pub fn parent(&self) -> Option<usize> {
        (self.level > 0).then_some(self.index / 2)
    }

    pub fn children(&self) -> [usize; 2] {
        [2 * self.index, 2 * self.index + 1]
    }
}

/// Binary KD partition of the point indices. All leaves sit on the same
/// level (`depth`); level 0 is the root.
#[derive(Debug, Clone)]
pub struct ClusterTree {
    points: PointSet,
    perm: Vec<usize>,
    levels: Vec<Vec<Cluster>>,
    leaf_size: usize,
}

impl ClusterTree {
    /// Recursive median split along the widest axis of each cluster's tight
    /// box until every cluster has at most `leaf_size` points. Ties in the
    /// split coordinate go to the lower original index.
    pub fn build(points: &PointSet, leaf_size: usize) -> Result<Self> {
        if leaf_size == 0 {
            return Err(H2Error::InvalidArgument("leaf size must be >= 1".into()));
        }
        let n = points.len();
        let mut depth = 0;
        while n.div_ceil(1 << depth) > leaf_size {
            depth += 1;
        }
        if n < (1 << depth) {
            return Err(H2Error::InvalidArgument(format!(
                "n = {n} points cannot fill 2^{depth} leaves of size <= {leaf_size}"
            )));
        }

        let mut order: Vec<usize> = (0..n).collect();
        let mut ranges = vec![(0usize, n)];
        let mut level_ranges = vec![ranges.clone()];
        for _ in 0..depth {
            let mut next = Vec::with_capacity(2 * ranges.len());
            for &(b, e) in &ranges {
                let slice = &mut order[b..e];
                let bbox = BoundingBox::of_points(points, slice.iter());
                let axis = bbox.widest_axis();
                slice.sort_by(|&i, &j| {
                    points.point(i)[axis]
                        .total_cmp(&points.point(j)[axis])
                        .then(i.cmp(&j))
                });
                let mid = b + (e - b) / 2;
                next.push((b, mid));
                next.push((mid, e));
            }
            ranges = next;
            level_ranges.push(ranges.clone());
        }

        let tree_points = points.permuted(&order);
        let levels = level_ranges
            .into_iter()
            .enumerate()
            .map(|(level, ranges)| {
                ranges
                    .into_iter()
                    .enumerate()
                    .map(|(index, (begin, end))| Cluster {
                        level,
                        index,
                        begin,
                        end,
                        bbox: BoundingBox::of_points(&tree_points, (begin..end).collect::<Vec<_>>().iter()),
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            points: tree_points,
            perm: order,
            levels,
            leaf_size,
        })
    }

    /// Points in tree order.
    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    /// Tree position → original point index.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    /// Index of the leaf level (root is level 0).
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, l: usize) -> &[Cluster] {
        &self.levels[l]
    }

    pub fn cluster(&self, level: usize, index: usize) -> &Cluster {
        &self.levels[level][index]
    }

    pub fn leaves(&self) -> &[Cluster] {
        &self.levels[self.depth()]
    }

    /// `v` given in original order → tree order.
    pub fn to_tree_order(&self, v: &[f64]) -> Vec<f64> {
        self.perm.iter().map(|&p| v[p]).collect()
    }

    /// `v` given in tree order → original order.
    pub fn to_original_order(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (pos, &p) in self.perm.iter().enumerate() {
            out[p] = v[pos];
        }
        out
    }
}

//! Tensor Chebyshev grids and Lagrange interpolation matrices.

use nalgebra::DMatrix;

use crate::geometry::BoundingBox;

/// Chebyshev points `cos((2i + 1) pi / (2p))` on `[-1, 1]`.
pub fn chebyshev_nodes(p: usize) -> Vec<f64> {
    (0..p)
        .map(|i| ((2 * i + 1) as f64 * std::f64::consts::PI / (2 * p) as f64).cos())
        .collect()
}

/// The `p^d` tensor grid mapped into `bbox`, row-major (`p^d x d`), in
/// lexicographic order with axis 0 varying slowest.
pub fn chebyshev_grid(bbox: &BoundingBox, p: usize) -> Vec<f64> {
    let d = bbox.dim();
    let nodes = chebyshev_nodes(p);
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|a| {
            let c = 0.5 * (bbox.lo[a] + bbox.hi[a]);
            let h = 0.5 * bbox.width(a);
            nodes.iter().map(|t| c + h * t).collect()
        })
        .collect();
    let count = p.pow(d as u32);
    let mut out = Vec::with_capacity(count * d);
    for idx in 0..count {
        let mut rem = idx;
        let mut digits = [0usize; 3];
        for a in (0..d).rev() {
            digits[a] = rem % p;
            rem /= p;
        }
        for a in 0..d {
            out.push(axes[a][digits[a]]);
        }
    }
    out
}

/// Values of the `p` Lagrange polynomials on `nodes` at `t`.
fn lagrange_row(nodes: &[f64], t: f64, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        let mut v = 1.0;
        for (m, &tm) in nodes.iter().enumerate() {
            if m != j {
                v *= (t - tm) / (nodes[j] - tm);
            }
        }
        *o = v;
    }
}

/// `|targets| x p^d` matrix whose entry `(i, j)` is the `j`-th tensor
/// Lagrange polynomial of the grid on `bbox` evaluated at target `i`.
/// `targets` is row-major with `bbox.dim()` columns.
pub fn interpolation_matrix(targets: &[f64], bbox: &BoundingBox, p: usize) -> DMatrix<f64> {
    let d = bbox.dim();
    let nt = targets.len() / d;
    let k = p.pow(d as u32);
    let nodes = chebyshev_nodes(p);
    let mut per_axis = vec![0.0; d * p];
    let mut out = DMatrix::zeros(nt, k);
    for i in 0..nt {
        for a in 0..d {
            let c = 0.5 * (bbox.lo[a] + bbox.hi[a]);
            let h = 0.5 * bbox.width(a);
            let t = if h > 0.0 { (targets[i * d + a] - c) / h } else { 0.0 };
            lagrange_row(&nodes, t, &mut per_axis[a * p..(a + 1) * p]);
        }
        for j in 0..k {
            let mut rem = j;
            let mut v = 1.0;
            for a in (0..d).rev() {
                v *= per_axis[a * p + rem % p];
                rem /= p;
            }
            out[(i, j)] = v;
        }
    }
    out
}

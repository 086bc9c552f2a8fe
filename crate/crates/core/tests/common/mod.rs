//! Random block systems and dense-oracle checks shared by the factorization
//! tests and the acceptance suite.

#![allow(dead_code)]

use h2factor::dense::thin_qr;
use h2factor::factorization::{augment_basis, partial_lu, project_cluster, FillInStore, LevelD};
use h2factor::oracle::{dense_schur_complement, dense_svd, DenseMatrix};
use h2factor::LevelGraph;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_orthogonal(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    thin_qr(random_matrix(rng, m, m)).0
}

pub fn orth_defect(q: &DMatrix<f64>) -> f64 {
    (q.transpose() * q - DMatrix::identity(q.ncols(), q.ncols())).norm()
}

fn to_dense(m: &DMatrix<f64>) -> DenseMatrix {
    DenseMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn prefix_sums(sizes: &[usize]) -> Vec<usize> {
    std::iter::once(0)
        .chain(sizes.iter().scan(0, |s, &x| {
            *s += x;
            Some(*s)
        }))
        .collect()
}

// Fill row with singular values spread over many decades, so a threshold
// placed in a gap separates kept and dropped directions cleanly.
pub fn graded_fill(rng: &mut ChaCha8Rng, m: usize, widths: &[usize], decay: f64) -> Vec<DMatrix<f64>> {
    let w: usize = widths.iter().sum();
    let t = m.min(w);
    let u = thin_qr(random_matrix(rng, m, t)).0;
    let v = thin_qr(random_matrix(rng, w, t)).0;
    let s = DMatrix::from_diagonal(&DVector::from_fn(t, |i, _| decay.powi(i as i32)));
    let full = u * s * v.transpose();
    let offs = prefix_sums(widths);
    widths
        .iter()
        .zip(&offs)
        .map(|(&wi, &c)| full.columns(c, wi).into_owned())
        .collect()
}

pub struct AugmentCase {
    pub added: usize,
    pub expected: usize,
    /// `||(I - U U^T) V_bar||_F` against the oracle's leading subspace.
    pub angle: f64,
    pub defect: f64,
    pub keeps_prefix: bool,
}

/// Augments a random orthonormal basis with a graded fill row and compares
/// with the SVD of the explicitly projected row. `None` when the random
/// spectrum has no usable gap.
pub fn augment_case(seed: u64, m: usize, kfrac: f64, nblocks: usize) -> Option<AugmentCase> {
    let mut rng = rng(seed);
    let k = ((m as f64) * kfrac) as usize;
    let v = if k > 0 { thin_qr(random_matrix(&mut rng, m, k)).0 } else { DMatrix::zeros(m, 0) };
    let widths: Vec<usize> = (0..nblocks).map(|_| rng.random_range(1..8)).collect();
    let f = graded_fill(&mut rng, m, &widths, 1e-2);

    let w: usize = widths.iter().sum();
    let mut all = DMatrix::zeros(m, w);
    for (b, &c) in f.iter().zip(&prefix_sums(&widths)) {
        all.columns_mut(c, b.ncols()).copy_from(b);
    }
    let proj = &all - &v * (v.transpose() * &all);
    let (u, sigma, _) = dense_svd(&to_dense(&proj));
    let big: Vec<f64> = sigma.iter().copied().filter(|&s| s > 1e-13).collect();
    if big.len() < 2 {
        return None;
    }
    let cut = rng.random_range(1..big.len());
    // Kept directions are resolved to about eps * sigma_1 / gap; keep the
    // cut where that is well below the tolerance.
    if big[cut - 1] / big[cut] <= 10.0 || big[cut - 1] < 1e-6 * big[0] {
        return None;
    }
    let eps = (big[cut - 1] * big[cut]).sqrt();
    let expected = cut.min(m - k);

    let (vt, added) = augment_basis(&v, &f, eps);
    let keeps_prefix = vt.columns(0, k).into_owned() == v;
    let uk = DMatrix::from_fn(m, expected, |i, j| u.get(i, j));
    let vbar = vt.columns(k, added).into_owned();
    let angle = if added == expected { (&vbar - &uk * (uk.transpose() * &vbar)).norm() } else { f64::INFINITY };
    Some(AugmentCase {
        added,
        expected,
        angle,
        defect: orth_defect(&vt) / m as f64,
        keeps_prefix,
    })
}

pub struct BlockSystem {
    pub sizes: Vec<usize>,
    pub graph: LevelGraph,
    pub d: LevelD,
    pub f: FillInStore,
    pub dense: DMatrix<f64>,
}

/// Symmetric, diagonally dominant block system on a random connected
/// cluster graph.
pub fn block_system(rng: &mut ChaCha8Rng, k: usize) -> BlockSystem {
    let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(2..7)).collect();
    let mut adjacency = vec![Vec::new(); k];
    for i in 0..k {
        for j in i + 1..k {
            if j == i + 1 || rng.random_bool(0.4) {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
    }
    let graph = LevelGraph::from_adjacency(0, adjacency);
    let offs = prefix_sums(&sizes);
    let n = offs[k];
    let mut dense = DMatrix::zeros(n, n);
    let mut d = LevelD::new(0, sizes.clone());
    for i in 0..k {
        for &j in &graph.adjacency[i] {
            if j < i {
                continue;
            }
            let mut b = random_matrix(rng, sizes[i], sizes[j]);
            if i == j {
                b = &b + b.transpose() + DMatrix::identity(sizes[i], sizes[i]) * (3.0 * n as f64);
            }
            dense.view_mut((offs[i], offs[j]), b.shape()).copy_from(&b);
            dense.view_mut((offs[j], offs[i]), (b.ncols(), b.nrows())).copy_from(&b.transpose());
            d.insert(i, j, b);
        }
    }
    BlockSystem {
        sizes,
        graph,
        d,
        f: FillInStore::new(0, k),
        dense,
    }
}

/// Dense matrix of the live system: `D` plus `F` wherever present.
pub fn live_matrix(d: &LevelD, f: &FillInStore) -> DMatrix<f64> {
    let live = d.live_sizes();
    let offs = prefix_sums(live);
    let n = offs[live.len()];
    let mut out = DMatrix::zeros(n, n);
    for i in 0..live.len() {
        for j in 0..live.len() {
            let mut v = out.view_mut((offs[i], offs[j]), (live[i], live[j]));
            if let Some(b) = d.get(i, j) {
                v += b.to_matrix();
            }
            if let Some(b) = f.get(i, j) {
                v += b.to_matrix();
            }
        }
    }
    out
}

pub struct SchurCase {
    pub r: usize,
    pub skeleton_ok: bool,
    /// Max-entry error relative to the largest Schur entry.
    pub rel_err: f64,
    pub fill_outside_graph: bool,
    pub panel_shapes_ok: bool,
}

/// Rotates one cluster of a random system, eliminates a random number of
/// its leading indices with `partial_lu`, and compares the remaining `D + F`
/// with the dense Schur complement of `G^T A G`.
pub fn schur_case(seed: u64, k: usize, tau_first: bool) -> SchurCase {
    let mut rng = rng(seed);
    let mut sys = block_system(&mut rng, k);
    let tau = if tau_first { 0 } else { rng.random_range(0..k) };
    let m = sys.sizes[tau];
    let r = rng.random_range(0..=m);
    let q = random_orthogonal(&mut rng, m);

    // Oracle: redundant indices of tau first, then everything else.
    let offs = prefix_sums(&sys.sizes);
    let n = offs[k];
    let mut g = DMatrix::identity(n, n);
    g.view_mut((offs[tau], offs[tau]), (m, m)).copy_from(&q);
    let b = g.transpose() * &sys.dense * &g;
    let mut order: Vec<usize> = (offs[tau]..offs[tau] + r).collect();
    for c in 0..k {
        let start = if c == tau { offs[c] + r } else { offs[c] };
        order.extend(start..offs[c + 1]);
    }
    let perm = DenseMatrix::from_fn(n, n, |i, j| b[(order[i], order[j])]);
    let expected = dense_schur_complement(&perm, r).expect("dominant diagonal");

    project_cluster(&mut sys.d, &mut sys.f, tau, &q);
    let factor = partial_lu(&mut sys.d, &mut sys.f, &sys.graph, tau, q, m - r).expect("nonsingular");
    let skeleton_ok = factor.r == r && sys.d.live(tau) == m - r && sys.d.shapes_consistent();

    // The live system keeps tau's skeleton at tau's position.
    let got = live_matrix(&sys.d, &sys.f);
    let mut pos = Vec::with_capacity(n - r);
    for c in 0..k {
        let (start, len) = if c == tau { (offs[c] + r, m - r) } else { (offs[c], sys.sizes[c]) };
        pos.extend(start..start + len);
    }
    let rank: Vec<usize> = pos
        .iter()
        .map(|p| order[r..].iter().position(|o| o == p).unwrap())
        .collect();
    let mut err: f64 = 0.0;
    for i in 0..n - r {
        for j in 0..n - r {
            err = err.max((got[(i, j)] - expected.get(rank[i], rank[j])).abs());
        }
    }
    let scale = expected.max_abs().max(f64::MIN_POSITIVE);
    let fill_outside_graph = sys
        .f
        .keys()
        .all(|(i, j)| sys.graph.adjacency[i].binary_search(&j).is_err());
    let panel_shapes_ok = r == 0
        || factor
            .entries
            .iter()
            .all(|e| factor.upper_block(e.cluster).map(|u| u.shape()) == Some((r, e.width)));
    SchurCase {
        r,
        skeleton_ok,
        rel_err: err / scale,
        fill_outside_graph,
        panel_shapes_ok,
    }
}

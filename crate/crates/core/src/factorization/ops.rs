//! Skeletonization steps: basis augmentation, projection, partial LU with
//! sub-batched Schur updates, level transition.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use rayon::prelude::*;

use super::store::{FillInStore, LevelD};
use super::{ClusterFactor, FactorEntry};
use crate::dense::{householder_r_in_place, left_singular_via_qr, orthonormal_complement, thin_qr, zero_pad, PivotedLu};
use crate::error::{H2Error, Result};
use crate::h2::{BlockRef, H2Matrix, SymmetricBlocks};
use crate::schedule::{SubBatchPlan, Workspace};
use crate::structure::{BlockKind, BlockPartition, LevelGraph};

/// `dst` of the same shape receives the block.
fn copy_block(mut dst: DMatrixViewMut<'_, f64>, b: BlockRef<'_>) {
    match b {
        BlockRef::Direct(m) => dst.copy_from(m),
        BlockRef::Transposed(m) => dst.tr_copy_from(m),
    }
}

/// Rows `start..start + count` of the block.
fn block_rows(b: BlockRef<'_>, start: usize, count: usize) -> DMatrix<f64> {
    match b {
        BlockRef::Direct(m) => m.rows(start, count).into_owned(),
        BlockRef::Transposed(m) => m.columns(start, count).transpose(),
    }
}

/// Extends the orthonormal `v` with the dominant left singular directions of
/// the fill row that `v` misses. Returns `([v, v_bar], added)`.
pub fn augment_basis(v: &DMatrix<f64>, f_row: &[DMatrix<f64>], eps_fill: f64) -> (DMatrix<f64>, usize) {
    let m = v.nrows();
    let width: usize = f_row.iter().map(|b| b.ncols()).sum();
    let mut yt = DMatrix::zeros(width, m);
    let mut row = 0;
    for b in f_row {
        assert_eq!(b.nrows(), m, "fill block row count");
        yt.view_mut((row, 0), (b.ncols(), m)).tr_copy_from(b);
        row += b.ncols();
    }
    augment_transposed(v, yt.as_view_mut(), eps_fill)
}

/// Same as [`augment_basis`] with the transposed fill row `f^T` in `ft`,
/// which is overwritten.
///
/// With `f^T = Q R`, `(I - V V^T) f = ((I - V V^T) R^T) Q^T`, so the QR of
/// the projected row is that of `R (I - V V^T)` and only an `m x m`
/// problem is projected.
pub(crate) fn augment_transposed(
    v: &DMatrix<f64>,
    ft: DMatrixViewMut<'_, f64>,
    eps_fill: f64,
) -> (DMatrix<f64>, usize) {
    let (m, k) = v.shape();
    if k >= m || ft.nrows() == 0 {
        return (v.clone(), 0);
    }
    let mut r = householder_r_in_place(ft);
    if k > 0 {
        let c = &r * v;
        r.gemm(-1.0, &c, &v.transpose(), 1.0);
    }
    let (u, sigma) = left_singular_via_qr(r.transpose().as_view());
    let keep = sigma
        .iter()
        .take_while(|&&s| s > 0.0 && s >= eps_fill)
        .count()
        .min(m - k);
    if keep == 0 {
        return (v.clone(), 0);
    }
    let mut vbar = u.columns(0, keep).into_owned();
    if k > 0 {
        // Second Gram-Schmidt pass against v.
        let c = v.transpose() * &vbar;
        vbar.gemm(-1.0, v, &c, 1.0);
    }
    let (q, _) = thin_qr(vbar);
    let mut out = DMatrix::zeros(m, k + keep);
    out.view_mut((0, 0), (m, k)).copy_from(v);
    out.view_mut((0, k), (m, keep)).copy_from(&q);
    (out, keep)
}

/// `[complement, v_tilde]`: square orthogonal with `v_tilde` as its last
/// columns.
pub fn orthogonal_complement(v_tilde: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, k) = v_tilde.shape();
    let comp = orthonormal_complement(v_tilde);
    let mut q = DMatrix::zeros(m, m);
    q.view_mut((0, 0), (m, m - k)).copy_from(&comp);
    q.view_mut((0, m - k), (m, k)).copy_from(v_tilde);
    q
}

fn project_blocks(blocks: &mut SymmetricBlocks, q: &[Option<&DMatrix<f64>>]) {
    blocks.par_iter_mut().for_each(|(&(a, b), m)| {
        if let Some(qa) = q[a] {
            *m = qa.transpose() * &*m;
        }
        if let Some(qb) = q[b] {
            *m = &*m * qb;
        }
    });
}

/// Applies `Q_a^T` from the left and `Q_b` from the right to every block
/// `(a, b)` of `D` and `F`, where `q[i]` is set for the clusters being
/// projected.
pub fn project_color(d: &mut LevelD, f: &mut FillInStore, q: &[Option<&DMatrix<f64>>]) {
    project_blocks(d.blocks_mut(), q);
    project_blocks(f.blocks_mut(), q);
}

/// Single-cluster projection.
pub fn project_cluster(d: &mut LevelD, f: &mut FillInStore, tau: usize, qt: &DMatrix<f64>) {
    let mut q = vec![None; d.num_clusters()];
    q[tau] = Some(qt);
    project_color(d, f, &q);
}

// Panel `[D_{R,j}]_j` of a projected cluster together with its factor.
struct Prepared {
    factor: ClusterFactor,
    // Transposed panel: explicit transposes keep the Schur products on the
    // fast GEMM path.
    panel_t: DMatrix<f64>,
}

fn prepare(d: &LevelD, graph: &LevelGraph, tau: usize, q: DMatrix<f64>, skeleton: usize) -> Result<Prepared> {
    let live = d.live(tau);
    let r = live - skeleton;
    let mut entries = Vec::with_capacity(graph.adjacency[tau].len());
    let mut col = 0;
    for &j in &graph.adjacency[tau] {
        let (width, seg_off) = if j == tau {
            (skeleton, r)
        } else {
            (d.live(j), d.segment_offset(j))
        };
        entries.push(FactorEntry {
            cluster: j,
            col,
            width,
            seg_off,
        });
        col += width;
    }
    let mut panel = DMatrix::zeros(r, col);
    let mut lu = None;
    let mut x = DMatrix::zeros(r, col);
    if r > 0 {
        let diag = d.get(tau, tau).expect("diagonal block present");
        let drr = block_rows(diag, 0, r).columns(0, r).into_owned();
        for e in &entries {
            let b = d.get(tau, e.cluster).expect("inadmissible block present");
            let rows = block_rows(b, 0, r);
            let src = if e.cluster == tau { rows.columns(r, skeleton) } else { rows.columns(0, e.width) };
            panel.view_mut((0, e.col), (r, e.width)).copy_from(&src);
        }
        let f = PivotedLu::factor(drr).map_err(|_| H2Error::FactorizationFailure {
            cluster: tau,
            level: d.level,
        })?;
        x.copy_from(&panel);
        f.solve_matrix(&mut x);
        lu = Some(f);
    }
    Ok(Prepared {
        factor: ClusterFactor {
            cluster: tau,
            level: d.level,
            q,
            r,
            lu,
            x,
            entries,
        },
        panel_t: panel.transpose(),
    })
}

fn shrink_blocks(blocks: &mut SymmetricBlocks, r: &[Option<usize>]) {
    blocks.par_iter_mut().for_each(|(&(a, b), m)| {
        let ra = r[a].unwrap_or(0);
        let rb = r[b].unwrap_or(0);
        if ra > 0 || rb > 0 {
            let (nr, nc) = m.shape();
            *m = m.view((ra, rb), (nr - ra, nc - rb)).into_owned();
        }
    });
}

// One Schur contribution `-P_p^T X_q` of cluster `owner`.
#[derive(Clone, Copy)]
struct Contribution {
    owner: usize,
    p: usize,
    q: usize,
}

fn apply_schur(
    blocks: &mut SymmetricBlocks,
    plan: &SubBatchPlan<(usize, usize)>,
    contributions: &[Contribution],
    prepared: &[Prepared],
) {
    let groups = plan.groups();
    if groups.is_empty() {
        return;
    }
    blocks.par_iter_mut().for_each(|(key, m)| {
        let Ok(g) = groups.binary_search_by(|(t, _)| t.cmp(key)) else { return };
        // Contributions of one target in owner order.
        for &id in &groups[g].1 {
            let c = contributions[id];
            let pr = &prepared[c.owner];
            let (ep, eq) = (&pr.factor.entries[c.p], &pr.factor.entries[c.q]);
            let pp = pr.panel_t.rows(ep.col, ep.width);
            let xq = pr.factor.x.columns(eq.col, eq.width);
            m.gemm(-1.0, &pp, &xq, 1.0);
        }
    });
}

/// Eliminates the redundant parts of already projected, mutually
/// independent clusters: factors `D_RR`, drops the eliminated rows and
/// columns, and applies the Schur updates to `D` (inadmissible targets) or
/// `F` (all other targets, created when absent).
pub fn eliminate_color(
    d: &mut LevelD,
    f: &mut FillInStore,
    graph: &LevelGraph,
    color: &[usize],
    q: Vec<DMatrix<f64>>,
    skeleton: &[usize],
) -> Result<Vec<ClusterFactor>> {
    let prepared: Vec<Prepared> = {
        let dr = &*d;
        color
            .par_iter()
            .zip(q.into_par_iter())
            .zip(skeleton.par_iter())
            .map(|((&tau, q), &k)| prepare(dr, graph, tau, q, k))
            .collect::<Result<Vec<_>>>()?
    };

    let mut r = vec![None; d.num_clusters()];
    for p in &prepared {
        r[p.factor.cluster] = Some(p.factor.r);
    }
    shrink_blocks(d.blocks_mut(), &r);
    shrink_blocks(f.blocks_mut(), &r);
    for (&tau, &k) in color.iter().zip(skeleton) {
        d.mark_skeletonized(tau, k);
    }

    let mut contributions = Vec::new();
    let mut dense_targets = Vec::new();
    let mut fill_targets = Vec::new();
    for (owner, p) in prepared.iter().enumerate() {
        if p.factor.r == 0 {
            continue;
        }
        let e = &p.factor.entries;
        for a in 0..e.len() {
            for b in a..e.len() {
                let key = (e[a].cluster, e[b].cluster);
                let id = contributions.len();
                contributions.push(Contribution { owner, p: a, q: b });
                if graph.adjacency[key.0].binary_search(&key.1).is_ok() {
                    dense_targets.push((key, id));
                } else {
                    fill_targets.push((key, id));
                }
            }
        }
    }
    let dense_plan = SubBatchPlan::new(dense_targets);
    let fill_plan = SubBatchPlan::new(fill_targets);
    for ((i, j), _) in fill_plan.groups() {
        if f.get(*i, *j).is_none() {
            f.add(*i, *j, DMatrix::zeros(d.live(*i), d.live(*j)));
        }
    }
    apply_schur(d.blocks_mut(), &dense_plan, &contributions, &prepared);
    apply_schur(f.blocks_mut(), &fill_plan, &contributions, &prepared);

    Ok(prepared.into_iter().map(|p| p.factor).collect())
}

/// Partial LU of one projected cluster whose last `skeleton` live indices
/// survive.
pub fn partial_lu(
    d: &mut LevelD,
    f: &mut FillInStore,
    graph: &LevelGraph,
    tau: usize,
    q: DMatrix<f64>,
    skeleton: usize,
) -> Result<ClusterFactor> {
    let mut out = eliminate_color(d, f, graph, &[tau], vec![q], &[skeleton])?;
    Ok(out.pop().unwrap())
}

/// Time spent in each step of [`skeletonize_color`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ColorTimes {
    pub augmentation: f64,
    pub projection: f64,
    pub partial_lu: f64,
}

/// Skeletonizes one independent set of clusters: augment the bases with the
/// fill rows, complete them, project `D` and `F`, eliminate.
///
/// `bases[i]` is the cluster basis in live coordinates (leaf basis on the
/// leaf level, zero-padded transfer stack above).
#[allow(clippy::too_many_arguments)]
pub fn skeletonize_color(
    bases: &[DMatrix<f64>],
    d: &mut LevelD,
    f: &mut FillInStore,
    graph: &LevelGraph,
    color: &[usize],
    eps_fill: f64,
    ws: &mut Workspace,
    times: &mut ColorTimes,
) -> Result<Vec<ClusterFactor>> {
    let t0 = std::time::Instant::now();
    let widths: Vec<usize> = color
        .iter()
        .map(|&tau| f.row(tau).map(|j| d.live(j)).sum())
        .collect();
    let sizes: Vec<usize> = color.iter().zip(&widths).map(|(&tau, &w)| d.live(tau) * w).collect();
    let augmented: Vec<(DMatrix<f64>, usize)> = {
        let (dr, fr) = (&*d, &*f);
        let slices = ws.carve(&sizes);
        color
            .par_iter()
            .zip(widths.par_iter())
            .zip(slices.into_par_iter())
            .map(|((&tau, &w), buf)| {
                let m = dr.live(tau);
                let mut yt = DMatrixViewMut::from_slice(buf, w, m);
                let mut row = 0;
                for j in fr.row(tau) {
                    let wj = dr.live(j);
                    copy_block(yt.view_mut((row, 0), (wj, m)), fr.get(j, tau).unwrap());
                    row += wj;
                }
                let v = if bases.is_empty() { DMatrix::zeros(m, 0) } else { bases[tau].clone() };
                let (vt, _) = augment_transposed(&v, yt, eps_fill);
                let k = vt.ncols();
                (orthogonal_complement(&vt), k)
            })
            .collect()
    };
    let t1 = std::time::Instant::now();
    times.augmentation += (t1 - t0).as_secs_f64();

    let (qs, skeleton): (Vec<DMatrix<f64>>, Vec<usize>) = augmented.into_iter().unzip();
    {
        let mut lookup = vec![None; d.num_clusters()];
        for (&tau, q) in color.iter().zip(&qs) {
            lookup[tau] = Some(q);
        }
        project_color(d, f, &lookup);
    }
    let t2 = std::time::Instant::now();
    times.projection += (t2 - t1).as_secs_f64();

    let out = eliminate_color(d, f, graph, color, qs, &skeleton)?;
    times.partial_lu += t2.elapsed().as_secs_f64();
    Ok(out)
}

/// Cluster bases of `level` in live coordinates: the leaf bases on the leaf
/// level, the transfer stack with each child's rows followed by zero rows
/// for its added directions above.
pub fn live_bases(h2: &H2Matrix, level: usize, child_skeleton: Option<&[usize]>) -> Vec<DMatrix<f64>> {
    if h2.top_level().is_none_or(|t| level < t) {
        return Vec::new();
    }
    let n = h2.tree().level(level).len();
    if level == h2.depth() {
        return (0..n).map(|i| h2.basis(level, i).clone()).collect();
    }
    let sk = child_skeleton.expect("child skeleton sizes");
    (0..n)
        .into_par_iter()
        .map(|i| {
            let k = h2.rank(level, i);
            let [c1, c2] = [2 * i, 2 * i + 1];
            let mut b = DMatrix::zeros(sk[c1] + sk[c2], k);
            let t1 = h2.transfer(level + 1, c1);
            let t2 = h2.transfer(level + 1, c2);
            b.view_mut((0, 0), t1.shape()).copy_from(&t1);
            b.view_mut((sk[c1], 0), t2.shape()).copy_from(&t2);
            b
        })
        .collect()
}

/// Bookkeeping of one level transition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransitionReport {
    /// Admissible leaves of the finished level merged into the parent `D`.
    pub admissible_merged: usize,
    /// Fill blocks merged into the parent `D` together with their leaf.
    pub fill_merged: usize,
    /// Fill blocks swept into the parent fill store.
    pub fill_swept: usize,
}

fn coupling_block(h2: &H2Matrix, level: usize, s: usize, t: usize, rows: usize, cols: usize) -> DMatrix<f64> {
    let c = h2.coupling(level, s, t).expect("admissible coupling present").to_matrix();
    zero_pad(&c, rows, cols)
}

/// Moves a fully skeletonized level to its parent level: inadmissible parent
/// blocks are assembled from the children's skeleton blocks (remaining `D`,
/// or padded coupling plus fill for admissible leaves); the remaining fill
/// sweeps into the parent fill store.
pub fn level_transition(
    h2: &H2Matrix,
    d: &LevelD,
    f: &FillInStore,
) -> Result<(LevelD, FillInStore, TransitionReport)> {
    let l = d.level;
    if l == 0 {
        return Err(H2Error::InvalidArgument("no level above the root".into()));
    }
    let partition: &BlockPartition = h2.partition();
    let np = h2.tree().level(l - 1).len();
    if (0..d.num_clusters()).any(|i| !d.is_skeletonized(i)) {
        return Err(H2Error::InvalidArgument(format!("level {l} not fully skeletonized")));
    }
    let sk = d.live_sizes();
    let live: Vec<usize> = (0..np).map(|p| sk[2 * p] + sk[2 * p + 1]).collect();
    let offset = |c: usize| if c % 2 == 0 { 0 } else { sk[c - 1] };

    let pairs: Vec<(usize, usize)> = partition
        .inadmissible_pairs(l - 1)
        .into_iter()
        .filter(|&(p, q)| p <= q)
        .collect();
    let assembled: Vec<((usize, usize), DMatrix<f64>, usize, Vec<(usize, usize)>)> = pairs
        .into_par_iter()
        .map(|(p, q)| {
            let mut block = DMatrix::zeros(live[p], live[q]);
            let mut admissible = 0;
            let mut fills = Vec::new();
            for c in [2 * p, 2 * p + 1] {
                for cc in [2 * q, 2 * q + 1] {
                    let mut dst = block.view_mut((offset(c), offset(cc)), (sk[c], sk[cc]));
                    match partition.classify(l, c, cc) {
                        BlockKind::Inadmissible => copy_block(dst, d.get(c, cc).expect("D block")),
                        BlockKind::Admissible => {
                            dst.copy_from(&coupling_block(h2, l, c, cc, sk[c], sk[cc]));
                            if let Some(fb) = f.get(c, cc) {
                                match fb {
                                    BlockRef::Direct(m) => dst += m,
                                    BlockRef::Transposed(m) => dst += m.transpose(),
                                }
                                fills.push((c.min(cc), c.max(cc)));
                            }
                            admissible += 1;
                        }
                        BlockKind::Covered => unreachable!("children of an inadmissible pair are leaves or inadmissible"),
                    }
                }
            }
            ((p, q), block, admissible, fills)
        })
        .collect();

    let mut dp = LevelD::new(l - 1, live.clone());
    let mut report = TransitionReport::default();
    let mut consumed = BTreeSet::new();
    for ((p, q), block, adm, fills) in assembled {
        // Off-diagonal parent pairs stand for both orientations.
        report.admissible_merged += if p == q { adm } else { 2 * adm };
        consumed.extend(fills);
        dp.insert(p, q, block);
    }
    report.fill_merged = consumed.len();

    let mut swept: BTreeMap<(usize, usize), DMatrix<f64>> = BTreeMap::new();
    for (&(a, b), m) in f.blocks().iter() {
        if consumed.contains(&(a, b)) {
            continue;
        }
        let (pa, pb) = (a / 2, b / 2);
        if pa == pb || partition.classify(l - 1, pa, pb) == BlockKind::Inadmissible {
            return Err(H2Error::InvalidArgument(format!(
                "fill block ({a}, {b}) at level {l} was not consumed"
            )));
        }
        let dst = swept
            .entry((pa, pb))
            .or_insert_with(|| DMatrix::zeros(live[pa], live[pb]));
        let mut v = dst.view_mut((offset(a), offset(b)), m.shape());
        v += m;
        report.fill_swept += 1;
    }
    let mut fp = FillInStore::new(l - 1, np);
    for ((pa, pb), m) in swept {
        fp.add(pa, pb, m);
    }
    Ok((dp, fp, report))
}

/// Dense matrix of the top level: `D` blocks, `B_s S B_t^T` for admissible
/// leaves plus their fill. Returns the matrix and the segment offsets.
pub fn assemble_top(
    h2: &H2Matrix,
    d: &LevelD,
    f: &FillInStore,
    bases: &[DMatrix<f64>],
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let l = d.level;
    let partition = h2.partition();
    let n = d.num_clusters();
    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0);
    for i in 0..n {
        offsets.push(offsets[i] + d.live(i));
    }
    let size = offsets[n];
    let mut a = DMatrix::zeros(size, size);
    for s in 0..n {
        for t in 0..n {
            let mut dst = a.view_mut((offsets[s], offsets[t]), (d.live(s), d.live(t)));
            match partition.classify(l, s, t) {
                BlockKind::Inadmissible => copy_block(dst, d.get(s, t).expect("D block")),
                BlockKind::Admissible => {
                    let c = h2.coupling(l, s, t).expect("coupling").to_matrix();
                    let bs: DMatrixView<'_, f64> = bases[s].as_view();
                    dst.copy_from(&(bs * c * bases[t].transpose()));
                    if let Some(fb) = f.get(s, t) {
                        match fb {
                            BlockRef::Direct(m) => dst += m,
                            BlockRef::Transposed(m) => dst += m.transpose(),
                        }
                    }
                }
                BlockKind::Covered => {
                    return Err(H2Error::InvalidArgument(format!(
                        "pair ({s}, {t}) is covered at the top level {l}"
                    )))
                }
            }
        }
    }
    Ok((a, offsets))
}

//! Strong recursive skeletonization LU of a symmetric H² matrix.
//!
//! Levels are skeletonized from the leaves up to one level below the top
//! level (the shallowest level with an admissible leaf). Within a level the
//! clusters are processed one colour of the inadmissible-block graph at a
//! time. The remaining top-level matrix is factored densely.

pub mod ops;
pub mod store;

use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dense::PivotedLu;
use crate::error::{H2Error, Result};
use crate::h2::H2Matrix;
use crate::schedule::Workspace;
use crate::structure::greedy_coloring;

pub use ops::{
    assemble_top, augment_basis, eliminate_color, level_transition, live_bases, orthogonal_complement,
    partial_lu, project_cluster, project_color, skeletonize_color, ColorTimes, TransitionReport,
};
pub use store::{FillDestination, FillInStore, LevelD};

/// Neighbour `cluster` of an eliminated cluster: its live columns occupy
/// `col..col + width` of the factor's panel and sit at `seg_off` within the
/// neighbour's level segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FactorEntry {
    pub cluster: usize,
    pub col: usize,
    pub width: usize,
    pub seg_off: usize,
}

/// Elimination record of one cluster.
///
/// `q` is the orthogonal `[complement, V~]`; the first `r` rotated indices
/// are redundant. `x = D_RR^{-1} [D_{R,j}]_j` gives the upper elementary
/// blocks. The matrix is symmetric, so the lower blocks are `x^T`.
#[derive(Debug, Clone)]
pub struct ClusterFactor {
    pub cluster: usize,
    pub level: usize,
    pub q: DMatrix<f64>,
    pub r: usize,
    pub lu: Option<PivotedLu>,
    pub x: DMatrix<f64>,
    pub entries: Vec<FactorEntry>,
}

impl ClusterFactor {
    /// Size of the cluster when it was eliminated.
    pub fn size(&self) -> usize {
        self.q.nrows()
    }

    pub fn skeleton(&self) -> usize {
        self.size() - self.r
    }

    /// `-D_RR^{-1} D_{R,j}`.
    pub fn upper_block(&self, j: usize) -> Option<DMatrix<f64>> {
        self.entries
            .iter()
            .find(|e| e.cluster == j)
            .map(|e| -self.x.columns(e.col, e.width))
    }

    /// `-D_{j,R} D_RR^{-1}`.
    pub fn lower_block(&self, j: usize) -> Option<DMatrix<f64>> {
        self.upper_block(j).map(|u| u.transpose())
    }

    pub fn stored_len(&self) -> usize {
        self.q.len() + self.x.len() + self.lu.as_ref().map_or(0, |l| l.stored_len())
    }
}

/// Factors of one skeletonized level, colours in elimination order.
#[derive(Debug, Clone)]
pub struct LevelFactor {
    pub level: usize,
    /// Segment length of every cluster on entry to the level.
    pub entry_live: Vec<usize>,
    /// Surviving skeleton size of every cluster.
    pub skeleton: Vec<usize>,
    pub colors: Vec<Vec<ClusterFactor>>,
}

impl LevelFactor {
    pub fn len(&self) -> usize {
        self.entry_live.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_skeleton(&self) -> usize {
        self.skeleton.iter().copied().max().unwrap_or(0)
    }

    /// Positions of the level vector gathered, in order, into the parent
    /// level vector (the skeleton tail of every segment).
    pub fn skeleton_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.skeleton.iter().sum());
        let mut start = 0;
        for (&e, &k) in self.entry_live.iter().zip(&self.skeleton) {
            out.extend(start + e - k..start + e);
            start += e;
        }
        out
    }
}

/// Dense pivoted LU of the top-level matrix.
#[derive(Debug, Clone)]
pub struct TopFactor {
    pub level: usize,
    pub offsets: Vec<usize>,
    pub lu: PivotedLu,
}

/// Wall time per factorization phase, seconds.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct PhaseTimes {
    pub norm_estimate: f64,
    pub coloring: f64,
    pub augmentation: f64,
    pub projection: f64,
    pub partial_lu: f64,
    pub level_transition: f64,
    pub top_factorization: f64,
}

impl PhaseTimes {
    pub fn entries(&self) -> [(&'static str, f64); 7] {
        [
            ("norm_estimate", self.norm_estimate),
            ("coloring", self.coloring),
            ("augmentation", self.augmentation),
            ("projection", self.projection),
            ("partial_lu", self.partial_lu),
            ("level_transition", self.level_transition),
            ("top_factorization", self.top_factorization),
        ]
    }

    pub fn total(&self) -> f64 {
        self.entries().iter().map(|e| e.1).sum()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelStats {
    pub level: usize,
    pub time_s: f64,
    pub csp: usize,
    pub colors: usize,
    /// Largest skeleton (augmented rank) on skeletonized levels, largest
    /// live size on the top level.
    pub max_rank: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FactorStats {
    pub phases: PhaseTimes,
    pub levels: Vec<LevelStats>,
    pub total_s: f64,
    pub factor_bytes: usize,
    pub top_size: usize,
    pub fill_blocks: usize,
}

/// Complete factorization `A = (product of level factors) * top LU`.
#[derive(Debug, Clone)]
pub struct Factorization {
    pub n: usize,
    /// Skeletonized levels, leaf level first.
    pub levels: Vec<LevelFactor>,
    pub top: TopFactor,
    pub eps_lu: f64,
    pub norm_estimate: f64,
    pub eps_fill: f64,
    pub stats: FactorStats,
}

impl Factorization {
    pub fn stored_len(&self) -> usize {
        let lv: usize = self
            .levels
            .iter()
            .flat_map(|l| l.colors.iter().flatten())
            .map(ClusterFactor::stored_len)
            .sum();
        lv + self.top.lu.stored_len()
    }

    pub fn stored_bytes(&self) -> usize {
        self.stored_len() * std::mem::size_of::<f64>()
    }

    /// Largest `||Q^T Q - I||_F / size` over all cluster factors.
    pub fn orthogonality_defect(&self) -> f64 {
        self.levels
            .iter()
            .flat_map(|l| l.colors.iter().flatten())
            .map(|c| {
                let m = c.size();
                (c.q.tr_mul(&c.q) - DMatrix::<f64>::identity(m, m)).norm() / m.max(1) as f64
            })
            .fold(0.0, f64::max)
    }
}

/// Factorizes `h2` with fill compression threshold `eps_lu * ||A||`.
pub fn factorize(h2: &H2Matrix, eps_lu: f64) -> Result<Factorization> {
    if !(eps_lu >= 0.0 && eps_lu.is_finite()) {
        return Err(H2Error::InvalidArgument(format!("eps_lu = {eps_lu}")));
    }
    let start = Instant::now();
    let mut phases = PhaseTimes::default();
    let t = Instant::now();
    let norm_estimate = h2.estimate_norm2();
    let eps_fill = eps_lu * norm_estimate;
    phases.norm_estimate = t.elapsed().as_secs_f64();

    let depth = h2.depth();
    let top = h2.top_level().unwrap_or(depth);
    let partition = h2.partition();
    let tree = h2.tree();

    let leaf_sizes: Vec<usize> = tree.leaves().iter().map(|c| c.len()).collect();
    let mut d = LevelD::new(depth, leaf_sizes);
    for (&(i, j), b) in h2.dense_blocks().iter() {
        d.insert(i, j, b.clone());
    }
    let mut f = FillInStore::new(depth, d.num_clusters());
    let mut bases = live_bases(h2, depth, None);
    let mut ws = Workspace::new();
    let mut levels = Vec::new();
    let mut level_stats = Vec::new();
    let mut fill_blocks = 0;

    for l in (top + 1..=depth).rev() {
        let level_start = Instant::now();
        let t = Instant::now();
        let graph = partition.level_graph(l);
        let coloring = greedy_coloring(&graph);
        phases.coloring += t.elapsed().as_secs_f64();

        let entry_live = d.live_sizes().to_vec();
        let mut times = ColorTimes::default();
        let mut colors = Vec::with_capacity(coloring.num_colors());
        for color in &coloring.colors {
            let factors = skeletonize_color(&bases, &mut d, &mut f, &graph, color, eps_fill, &mut ws, &mut times)?;
            colors.push(factors);
        }
        phases.augmentation += times.augmentation;
        phases.projection += times.projection;
        phases.partial_lu += times.partial_lu;
        fill_blocks += f.len();

        let t = Instant::now();
        let skeleton = d.live_sizes().to_vec();
        let (dn, fn_, _) = level_transition(h2, &d, &f)?;
        d = dn;
        f = fn_;
        bases = live_bases(h2, l - 1, Some(&skeleton));
        phases.level_transition += t.elapsed().as_secs_f64();

        level_stats.push(LevelStats {
            level: l,
            time_s: level_start.elapsed().as_secs_f64(),
            csp: graph.max_degree(),
            colors: coloring.num_colors(),
            max_rank: skeleton.iter().copied().max().unwrap_or(0),
        });
        levels.push(LevelFactor {
            level: l,
            entry_live,
            skeleton,
            colors,
        });
    }

    let t = Instant::now();
    let (a, offsets) = assemble_top(h2, &d, &f, &bases)?;
    let top_size = a.nrows();
    let lu = PivotedLu::factor(a).map_err(|e| e.in_stage("top_factorization"))?;
    let top_time = t.elapsed().as_secs_f64();
    phases.top_factorization = top_time;
    level_stats.push(LevelStats {
        level: top,
        time_s: top_time,
        csp: partition.level_graph(top).max_degree(),
        colors: 0,
        max_rank: d.live_sizes().iter().copied().max().unwrap_or(0),
    });

    let mut out = Factorization {
        n: h2.size(),
        levels,
        top: TopFactor {
            level: top,
            offsets,
            lu,
        },
        eps_lu,
        norm_estimate,
        eps_fill,
        stats: FactorStats {
            phases,
            levels: level_stats,
            total_s: 0.0,
            factor_bytes: 0,
            top_size,
            fill_blocks,
        },
    };
    out.stats.factor_bytes = out.stored_bytes();
    out.stats.total_s = start.elapsed().as_secs_f64();
    Ok(out)
}

//! Block partition of the matrix tree, sparsity constants and per-level
//! conflict-graph coloring.

use serde::{Deserialize, Serialize};

use crate::error::{H2Error, Result};
use crate::geometry::{BoundingBox, ClusterTree};

/// How `Dist(s, t)` is measured in the admissibility test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// Gap between the boxes as point sets.
    BoxGap,
    /// Distance between the box centres.
    CenterDistance,
}

/// General admissibility condition `(D(s) + D(t)) / 2 <= eta * Dist(s, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub eta: f64,
    pub metric: DistanceMetric,
}

impl Admissibility {
    pub fn new(eta: f64) -> Self {
        Self {
            eta,
            metric: DistanceMetric::CenterDistance,
        }
    }

    pub fn with_metric(eta: f64, metric: DistanceMetric) -> Self {
        Self { eta, metric }
    }

    pub fn distance(&self, s: &BoundingBox, t: &BoundingBox) -> f64 {
        match self.metric {
            DistanceMetric::BoxGap => s.distance(t),
            DistanceMetric::CenterDistance => s.center_distance(t),
        }
    }

    pub fn is_admissible(&self, s: &BoundingBox, t: &BoundingBox) -> bool {
        admissible(s.diameter(), t.diameter(), self.distance(s, t), self.eta)
    }
}

/// The admissibility predicate on raw diameters and distance. Coincident
/// boxes (`dist == 0`) are never admissible.
pub fn admissible(diam_s: f64, diam_t: f64, dist: f64, eta: f64) -> bool {
    dist > 0.0 && 0.5 * (diam_s + diam_t) <= eta * dist
}

/// Where a same-level cluster pair sits in the matrix tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Inner or leaf node that failed admissibility (dense at the leaf level).
    Inadmissible,
    /// Admissible leaf at this level.
    Admissible,
    /// Below an admissible leaf of a coarser level.
    Covered,
}

#[derive(Debug, Clone, Default)]
struct LevelBlocks {
    inadmissible: Vec<Vec<usize>>,
    admissible: Vec<Vec<usize>>,
}

/// Matrix-tree block partition produced by a dual tree traversal.
///
/// Per level, each cluster stores the sorted list of same-level clusters it
/// forms an inadmissible node with (including itself) and those it forms an
/// admissible leaf with. Both relations are symmetric.
#[derive(Debug, Clone)]
pub struct BlockPartition {
    admissibility: Admissibility,
    levels: Vec<LevelBlocks>,
    top_level: Option<usize>,
}

impl BlockPartition {
    /// Dual tree traversal from `(root, root)`: admissible pairs become
    /// admissible leaves, inadmissible pairs recurse on their four child
    /// pairs, and inadmissible leaf pairs become dense leaves.
    pub fn build(tree: &ClusterTree, admissibility: Admissibility) -> Self {
        let depth = tree.depth();
        let mut levels: Vec<LevelBlocks> = (0..=depth)
            .map(|l| {
                let n = tree.level(l).len();
                LevelBlocks {
                    inadmissible: vec![Vec::new(); n],
                    admissible: vec![Vec::new(); n],
                }
            })
            .collect();
        let mut frontier = vec![(0usize, 0usize)];
        for l in 0..=depth {
            let mut next = Vec::new();
            let clusters = tree.level(l);
            for (s, t) in frontier.drain(..) {
                if admissibility.is_admissible(&clusters[s].bbox, &clusters[t].bbox) {
                    levels[l].admissible[s].push(t);
                } else {
                    levels[l].inadmissible[s].push(t);
                    if l < depth {
                        for cs in clusters[s].children() {
                            for ct in clusters[t].children() {
                                next.push((cs, ct));
                            }
                        }
                    }
                }
            }
            frontier = next;
        }
        for level in &mut levels {
            level.inadmissible.iter_mut().for_each(|v| v.sort_unstable());
            level.admissible.iter_mut().for_each(|v| v.sort_unstable());
        }
        let top_level = levels
            .iter()
            .position(|lv| lv.admissible.iter().any(|v| !v.is_empty()));
        Self {
            admissibility,
            levels,
            top_level,
        }
    }

    pub fn admissibility(&self) -> Admissibility {
        self.admissibility
    }

    pub fn eta(&self) -> f64 {
        self.admissibility.eta
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn num_clusters(&self, level: usize) -> usize {
        self.levels[level].inadmissible.len()
    }

    /// Shallowest level holding an admissible leaf; `None` for a dense-only
    /// partition.
    pub fn top_level(&self) -> Option<usize> {
        self.top_level
    }

    /// Sorted inadmissible partners of cluster `i` at `level` (includes `i`
    /// whenever the diagonal node exists at that level).
    pub fn inadmissible_neighbors(&self, level: usize, i: usize) -> &[usize] {
        &self.levels[level].inadmissible[i]
    }

    /// Sorted admissible-leaf partners of cluster `i` at `level`.
    pub fn admissible_neighbors(&self, level: usize, i: usize) -> &[usize] {
        &self.levels[level].admissible[i]
    }

    pub fn classify(&self, level: usize, i: usize, j: usize) -> BlockKind {
        let lv = &self.levels[level];
        if lv.inadmissible[i].binary_search(&j).is_ok() {
            BlockKind::Inadmissible
        } else if lv.admissible[i].binary_search(&j).is_ok() {
            BlockKind::Admissible
        } else {
            BlockKind::Covered
        }
    }

    /// All ordered inadmissible pairs at `level`.
    pub fn inadmissible_pairs(&self, level: usize) -> Vec<(usize, usize)> {
        pairs(&self.levels[level].inadmissible)
    }

    /// All ordered admissible-leaf pairs at `level`.
    pub fn admissible_pairs(&self, level: usize) -> Vec<(usize, usize)> {
        pairs(&self.levels[level].admissible)
    }

    /// Dense leaves: inadmissible pairs at the leaf level.
    pub fn dense_leaves(&self) -> Vec<(usize, usize)> {
        self.inadmissible_pairs(self.depth())
    }

    /// Maximum number of inadmissible blocks in any block row of `level`.
    pub fn sparsity_constant(&self, level: usize) -> Result<usize> {
        let lv = self.levels.get(level).ok_or_else(|| {
            H2Error::InvalidArgument(format!(
                "level {level} out of range 0..={}",
                self.depth()
            ))
        })?;
        Ok(lv.inadmissible.iter().map(Vec::len).max().unwrap_or(0))
    }

    /// Maximum sparsity constant over all levels.
    pub fn max_sparsity_constant(&self) -> usize {
        (0..=self.depth())
            .map(|l| self.sparsity_constant(l).unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// Sum of `|s| * |t|` over the leaves of the matrix tree; equals `n^2`
    /// when the leaves tile the matrix exactly once.
    pub fn leaf_area(&self, tree: &ClusterTree) -> u128 {
        let mut area = 0u128;
        for l in 0..=self.depth() {
            let clusters = tree.level(l);
            for (s, t) in self.admissible_pairs(l) {
                area += (clusters[s].len() * clusters[t].len()) as u128;
            }
        }
        let leaves = tree.leaves();
        for (s, t) in self.dense_leaves() {
            area += (leaves[s].len() * leaves[t].len()) as u128;
        }
        area
    }

    /// Every stored relation is mirrored.
    pub fn is_symmetric(&self) -> bool {
        self.levels.iter().all(|lv| {
            [&lv.inadmissible, &lv.admissible].iter().all(|adj| {
                adj.iter()
                    .enumerate()
                    .all(|(i, row)| row.iter().all(|&j| adj[j].binary_search(&i).is_ok()))
            })
        })
    }

    /// Conflict graph of the inadmissible blocks at `level`.
    pub fn level_graph(&self, level: usize) -> LevelGraph {
        LevelGraph {
            level,
            adjacency: self.levels[level].inadmissible.clone(),
        }
    }
}

fn pairs(adj: &[Vec<usize>]) -> Vec<(usize, usize)> {
    adj.iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().map(move |&j| (i, j)))
        .collect()
}

/// Connectivity graph of one level's inadmissible block-sparse matrix. The
/// adjacency rows are sorted and include the self loop.
#[derive(Debug, Clone)]
pub struct LevelGraph {
    pub level: usize,
    pub adjacency: Vec<Vec<usize>>,
}

impl LevelGraph {
    pub fn from_adjacency(level: usize, mut adjacency: Vec<Vec<usize>>) -> Self {
        for (i, row) in adjacency.iter_mut().enumerate() {
            if !row.contains(&i) {
                row.push(i);
            }
            row.sort_unstable();
            row.dedup();
        }
        Self { level, adjacency }
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    /// Largest row count, self loop included (the sparsity constant).
    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Partition of a level's clusters into independent sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coloring {
    pub level: usize,
    pub colors: Vec<Vec<usize>>,
}

impl Coloring {
    pub fn num_colors(&self) -> usize {
        self.colors.len()
    }

    /// Each node in exactly one color and no color holds two adjacent nodes.
    pub fn is_valid_for(&self, graph: &LevelGraph) -> bool {
        let mut color_of = vec![usize::MAX; graph.len()];
        for (c, members) in self.colors.iter().enumerate() {
            for &v in members {
                if v >= graph.len() || color_of[v] != usize::MAX {
                    return false;
                }
                color_of[v] = c;
            }
        }
        if color_of.contains(&usize::MAX) {
            return false;
        }
        graph.adjacency.iter().enumerate().all(|(v, row)| {
            row.iter().all(|&u| u == v || color_of[u] != color_of[v])
        })
    }
}

/// Greedy coloring in ascending node order: each node takes the smallest
/// color not used by an already colored neighbour.
pub fn greedy_coloring(graph: &LevelGraph) -> Coloring {
    let n = graph.len();
    let mut color_of = vec![usize::MAX; n];
    let mut used = Vec::new();
    let mut num_colors = 0;
    for v in 0..n {
        used.clear();
        used.resize(num_colors + 1, false);
        for &u in &graph.adjacency[v] {
            if u != v && color_of[u] != usize::MAX {
                used[color_of[u]] = true;
            }
        }
        let c = used.iter().position(|&b| !b).unwrap();
        color_of[v] = c;
        num_colors = num_colors.max(c + 1);
    }
    let mut colors = vec![Vec::new(); num_colors];
    for (v, &c) in color_of.iter().enumerate() {
        colors[c].push(v);
    }
    Coloring {
        level: graph.level,
        colors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::generate_uniform_grid;

    fn partition(n: usize, d: usize, m: usize, eta: f64) -> (ClusterTree, BlockPartition) {
        let p = generate_uniform_grid(n, d).unwrap();
        let t = ClusterTree::build(&p, m).unwrap();
        let bp = BlockPartition::build(&t, Admissibility::new(eta));
        (t, bp)
    }

    #[test]
    fn predicate_examples() {
        assert!(admissible(1.0, 1.0, 2.0, 0.9));
        assert!(!admissible(1.0, 1.0, 0.0, 0.9));
        assert!(!admissible(0.0, 0.0, 0.0, 10.0));
        let a = BoundingBox::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        let b = BoundingBox::new(vec![1.0, 0.0], vec![2.0, 1.0]);
        let gap = Admissibility::with_metric(100.0, DistanceMetric::BoxGap);
        assert!(!gap.is_admissible(&a, &b));
        assert!(!Admissibility::new(0.9).is_admissible(&a, &a));
    }

    #[test]
    fn single_node_partition_is_dense() {
        let (t, bp) = partition(32, 2, 64, 0.9);
        assert_eq!(bp.top_level(), None);
        assert_eq!(bp.dense_leaves(), vec![(0, 0)]);
        assert_eq!(bp.leaf_area(&t), 32 * 32);
    }

    #[test]
    fn partition_tiles_and_is_symmetric() {
        for &(n, d, eta) in &[(4096usize, 2usize, 0.9), (4096, 3, 0.7), (3000, 2, 0.5)] {
            let (t, bp) = partition(n, d, 64, eta);
            assert_eq!(bp.leaf_area(&t), (n * n) as u128);
            assert!(bp.is_symmetric());
            assert!(bp.top_level().is_some());
        }
    }

    #[test]
    fn cov2d_sparsity_constant() {
        let (_, bp) = partition(1 << 14, 2, 64, 0.9);
        // Brute-force recount from the pair lists.
        for l in 0..=bp.depth() {
            let pairs = bp.inadmissible_pairs(l);
            let mut counts = vec![0usize; bp.num_clusters(l)];
            for (s, _) in pairs {
                counts[s] += 1;
            }
            let brute = counts.into_iter().max().unwrap();
            assert_eq!(bp.sparsity_constant(l).unwrap(), brute);
            assert!(brute <= 11, "level {l}: {brute}");
        }
        assert!(bp.sparsity_constant(bp.depth() + 1).is_err());
    }

    #[test]
    fn sparsity_constant_does_not_grow() {
        let (_, a) = partition(1 << 14, 2, 64, 0.9);
        let (_, b) = partition(1 << 16, 2, 64, 0.9);
        assert_eq!(a.max_sparsity_constant(), b.max_sparsity_constant());
    }

    #[test]
    fn chain_graph_sparsity() {
        let adj: Vec<Vec<usize>> = (0..6usize)
            .map(|i| {
                (i.saturating_sub(1)..=(i + 1).min(5)).collect()
            })
            .collect();
        let g = LevelGraph::from_adjacency(0, adj);
        assert_eq!(g.max_degree(), 3);
    }

    #[test]
    fn path_and_complete_graphs() {
        let path = LevelGraph::from_adjacency(0, vec![vec![1], vec![0, 2], vec![1]]);
        let c = greedy_coloring(&path);
        assert_eq!(c.colors, vec![vec![0, 2], vec![1]]);
        assert!(c.is_valid_for(&path));

        let k = 5;
        let complete = LevelGraph::from_adjacency(0, (0..k).map(|_| (0..k).collect()).collect());
        let c = greedy_coloring(&complete);
        assert_eq!(c.num_colors(), k);
        assert!(c.is_valid_for(&complete));
    }

    #[test]
    fn coloring_bound_on_partitions() {
        for &(n, d, eta) in &[(1usize << 14, 2usize, 0.9), (1 << 12, 3, 0.7)] {
            let (_, bp) = partition(n, d, 64, eta);
            for l in 0..=bp.depth() {
                let g = bp.level_graph(l);
                let c = greedy_coloring(&g);
                assert!(c.is_valid_for(&g));
                assert!(c.num_colors() <= bp.sparsity_constant(l).unwrap() + 1);
            }
        }
    }

    #[test]
    fn invalid_coloring_detected() {
        let path = LevelGraph::from_adjacency(0, vec![vec![1], vec![0, 2], vec![1]]);
        let bad = Coloring {
            level: 0,
            colors: vec![vec![0, 1], vec![2]],
        };
        assert!(!bad.is_valid_for(&path));
        let missing = Coloring {
            level: 0,
            colors: vec![vec![0, 2]],
        };
        assert!(!missing.is_valid_for(&path));
    }
}

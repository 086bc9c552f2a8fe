//! Per-level block stores: the inadmissible part `D` and the fill-in `F`.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::h2::{BlockRef, SymmetricBlocks};
use crate::structure::{BlockKind, BlockPartition};

/// Dense inadmissible blocks of one level over the clusters' live indices.
///
/// Live indices are the full cluster (leaf level) or the concatenated
/// children skeletons (coarser levels) until the cluster is skeletonized,
/// after which only its skeleton remains.
#[derive(Debug, Clone)]
pub struct LevelD {
    pub level: usize,
    blocks: SymmetricBlocks,
    entry_live: Vec<usize>,
    live: Vec<usize>,
    skeletonized: Vec<bool>,
}

impl LevelD {
    pub fn new(level: usize, live: Vec<usize>) -> Self {
        let n = live.len();
        Self {
            level,
            blocks: SymmetricBlocks::new(),
            entry_live: live.clone(),
            live,
            skeletonized: vec![false; n],
        }
    }

    pub fn num_clusters(&self) -> usize {
        self.live.len()
    }

    /// Live size of cluster `i` when the level was entered.
    pub fn entry_live(&self, i: usize) -> usize {
        self.entry_live[i]
    }

    pub fn live(&self, i: usize) -> usize {
        self.live[i]
    }

    pub fn live_sizes(&self) -> &[usize] {
        &self.live
    }

    /// Offset of the current live indices of `i` inside its level segment.
    pub fn segment_offset(&self, i: usize) -> usize {
        self.entry_live[i] - self.live[i]
    }

    pub fn is_skeletonized(&self, i: usize) -> bool {
        self.skeletonized[i]
    }

    pub(crate) fn mark_skeletonized(&mut self, i: usize, skeleton: usize) {
        self.live[i] = skeleton;
        self.skeletonized[i] = true;
    }

    pub fn insert(&mut self, i: usize, j: usize, block: DMatrix<f64>) {
        debug_assert_eq!(block.shape(), (self.live[i], self.live[j]));
        self.blocks.insert(i, j, block);
    }

    pub fn get(&self, i: usize, j: usize) -> Option<BlockRef<'_>> {
        self.blocks.get(i, j)
    }

    pub fn blocks(&self) -> &SymmetricBlocks {
        &self.blocks
    }

    pub(crate) fn blocks_mut(&mut self) -> &mut SymmetricBlocks {
        &mut self.blocks
    }

    /// Every block matches the live sizes of its row and column cluster.
    pub fn shapes_consistent(&self) -> bool {
        self.blocks
            .iter()
            .all(|(&(i, j), b)| b.shape() == (self.live[i], self.live[j]))
    }
}

/// Where a fill-in block ends up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillDestination {
    /// Merged with an admissible leaf of this level at the level transition.
    AdmissibleLeaf,
    /// Swept up to the pair's parents.
    Ancestor,
}

/// Fill-in blocks of one level, symmetric keying, with a per-cluster index
/// of the occupied rows.
#[derive(Debug, Clone)]
pub struct FillInStore {
    pub level: usize,
    blocks: SymmetricBlocks,
    adj: Vec<BTreeSet<usize>>,
}

impl FillInStore {
    pub fn new(level: usize, clusters: usize) -> Self {
        Self {
            level,
            blocks: SymmetricBlocks::new(),
            adj: vec![BTreeSet::new(); clusters],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Option<BlockRef<'_>> {
        self.blocks.get(i, j)
    }

    /// Adds `block` to the `(i, j)` entry, creating it when absent.
    pub fn add(&mut self, i: usize, j: usize, block: DMatrix<f64>) {
        debug_assert_ne!(i, j);
        if let Some(existing) = self.blocks.upper_mut(i.min(j), i.max(j)) {
            if i <= j {
                *existing += block;
            } else {
                *existing += block.transpose();
            }
        } else {
            self.blocks.insert(i, j, block);
            self.adj[i].insert(j);
            self.adj[j].insert(i);
        }
    }

    /// Clusters with a fill block in row `i`, ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[i].iter().copied()
    }

    pub fn row_len(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &SymmetricBlocks {
        &self.blocks
    }

    pub(crate) fn blocks_mut(&mut self) -> &mut SymmetricBlocks {
        &mut self.blocks
    }

    pub fn keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.blocks.keys().copied()
    }

    /// Destination of the pair `(i, j)`, or `None` when the pair is an
    /// inadmissible block (which must never hold fill-in).
    pub fn destination(partition: &BlockPartition, level: usize, i: usize, j: usize) -> Option<FillDestination> {
        match partition.classify(level, i, j) {
            BlockKind::Admissible => Some(FillDestination::AdmissibleLeaf),
            BlockKind::Covered => Some(FillDestination::Ancestor),
            BlockKind::Inadmissible => None,
        }
    }

    /// Every key is an admissible leaf or lies under one.
    pub fn keys_admissible(&self, partition: &BlockPartition) -> bool {
        self.keys()
            .all(|(i, j)| Self::destination(partition, self.level, i, j).is_some())
    }
}

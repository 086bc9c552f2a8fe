//! Block maps keyed by cluster pairs with only one orientation stored.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVectorView, DVectorViewMut};
use rayon::prelude::*;

/// A stored block seen in the requested orientation.
#[derive(Debug, Clone, Copy)]
pub enum BlockRef<'a> {
    Direct(&'a DMatrix<f64>),
    Transposed(&'a DMatrix<f64>),
}

impl BlockRef<'_> {
    pub fn nrows(&self) -> usize {
        match self {
            BlockRef::Direct(m) => m.nrows(),
            BlockRef::Transposed(m) => m.ncols(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            BlockRef::Direct(m) => m.ncols(),
            BlockRef::Transposed(m) => m.nrows(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            BlockRef::Direct(m) => (*m).clone(),
            BlockRef::Transposed(m) => m.transpose(),
        }
    }

    /// `y += alpha * B x`.
    pub fn gemv_add(&self, mut y: DVectorViewMut<'_, f64>, alpha: f64, x: DVectorView<'_, f64>) {
        match self {
            BlockRef::Direct(m) => y.gemv(alpha, m, &x, 1.0),
            BlockRef::Transposed(m) => y.gemv_tr(alpha, m, &x, 1.0),
        }
    }
}

/// Symmetric block map: the block for `(i, j)` with `i <= j` is stored and
/// `(j, i)` is served as its transpose.
#[derive(Debug, Clone, Default)]
pub struct SymmetricBlocks {
    map: BTreeMap<(usize, usize), DMatrix<f64>>,
}

impl SymmetricBlocks {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts the block for `(i, j)`; stored transposed when `i > j`.
    pub fn insert(&mut self, i: usize, j: usize, block: DMatrix<f64>) {
        if i <= j {
            self.map.insert((i, j), block);
        } else {
            self.map.insert((j, i), block.transpose());
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Option<BlockRef<'_>> {
        if i <= j {
            self.map.get(&(i, j)).map(BlockRef::Direct)
        } else {
            self.map.get(&(j, i)).map(BlockRef::Transposed)
        }
    }

    /// Removes the block for `(i, j)` and returns it in that orientation.
    pub fn remove(&mut self, i: usize, j: usize) -> Option<DMatrix<f64>> {
        if i <= j {
            self.map.remove(&(i, j))
        } else {
            self.map.remove(&(j, i)).map(|m| m.transpose())
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.map.contains_key(&(i.min(j), i.max(j)))
    }

    /// Stored block for `i <= j`.
    pub fn upper_mut(&mut self, i: usize, j: usize) -> Option<&mut DMatrix<f64>> {
        debug_assert!(i <= j);
        self.map.get_mut(&(i, j))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &DMatrix<f64>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&(usize, usize), &mut DMatrix<f64>)> {
        self.map.iter_mut()
    }

    pub fn par_iter_mut(
        &mut self,
    ) -> impl ParallelIterator<Item = (&(usize, usize), &mut DMatrix<f64>)> {
        self.map.par_iter_mut()
    }

    pub fn keys(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Number of stored reals.
    pub fn stored_len(&self) -> usize {
        self.map.values().map(|m| m.len()).sum()
    }
}

impl FromIterator<((usize, usize), DMatrix<f64>)> for SymmetricBlocks {
    fn from_iter<I: IntoIterator<Item = ((usize, usize), DMatrix<f64>)>>(iter: I) -> Self {
        let mut s = Self::new();
        for ((i, j), b) in iter {
            s.insert(i, j, b);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirrored_access() {
        let mut s = SymmetricBlocks::new();
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        s.insert(4, 1, b.clone());
        assert_eq!(s.get(4, 1).unwrap().to_matrix(), b);
        assert_eq!(s.get(1, 4).unwrap().to_matrix(), b.transpose());
        assert!(s.contains(1, 4) && s.contains(4, 1));
        assert_eq!(s.stored_len(), 6);
        let x = nalgebra::DVector::from_vec(vec![1.0, 1.0]);
        let mut y = nalgebra::DVector::zeros(3);
        s.get(1, 4).unwrap().gemv_add(y.as_view_mut(), 1.0, x.as_view());
        assert_eq!(y.as_slice(), &[5.0, 7.0, 9.0]);
    }
}

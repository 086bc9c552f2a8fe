//! Conflict-free update scheduling and per-colour scratch memory.

/// Updates grouped by the block they write to.
///
/// Round `k` holds the `k`-th contribution of every target that has one,
/// so no round writes a target twice. Running the rounds in order, each in
/// parallel over its targets, gives the same result as applying every
/// target's contributions in their listed order.
#[derive(Debug, Clone)]
pub struct SubBatchPlan<K: Ord + Copy> {
    groups: Vec<(K, Vec<usize>)>,
}

impl<K: Ord + Copy> SubBatchPlan<K> {
    /// `contributions` lists `(target, id)` pairs; ids keep their relative
    /// order within a target. Targets are sorted.
    pub fn new(contributions: impl IntoIterator<Item = (K, usize)>) -> Self {
        let mut all: Vec<(K, usize, usize)> = contributions
            .into_iter()
            .enumerate()
            .map(|(seq, (k, id))| (k, seq, id))
            .collect();
        all.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut groups: Vec<(K, Vec<usize>)> = Vec::new();
        for (k, _, id) in all {
            match groups.last_mut() {
                Some((last, ids)) if *last == k => ids.push(id),
                _ => groups.push((k, vec![id])),
            }
        }
        Self { groups }
    }

    /// Targets in sorted order with their contribution ids.
    pub fn groups(&self) -> &[(K, Vec<usize>)] {
        &self.groups
    }

    pub fn num_targets(&self) -> usize {
        self.groups.len()
    }

    pub fn num_rounds(&self) -> usize {
        self.groups.iter().map(|(_, v)| v.len()).max().unwrap_or(0)
    }

    /// `(target, id)` pairs of round `k`, targets sorted.
    pub fn round(&self, k: usize) -> Vec<(K, usize)> {
        self.groups
            .iter()
            .filter_map(|(t, ids)| ids.get(k).map(|&id| (*t, id)))
            .collect()
    }
}

/// One buffer carved into disjoint slices whose offsets are the prefix sums
/// of the requested sizes. The buffer is reused across calls to
/// [`Workspace::carve`] and only grows.
#[derive(Debug, Default)]
pub struct Workspace {
    buf: Vec<f64>,
    offsets: Vec<usize>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Exclusive prefix sums of `sizes` (with the total appended).
    pub fn prefix_sums(sizes: &[usize]) -> Vec<usize> {
        let mut out = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        out.push(0);
        for &s in sizes {
            acc += s;
            out.push(acc);
        }
        out
    }

    /// Zeroed disjoint slices of the given sizes.
    pub fn carve(&mut self, sizes: &[usize]) -> Vec<&mut [f64]> {
        self.offsets = Self::prefix_sums(sizes);
        let total = *self.offsets.last().unwrap();
        if self.buf.len() < total {
            self.buf.resize(total, 0.0);
        }
        let mut rest = &mut self.buf[..total];
        rest.fill(0.0);
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            let (head, tail) = rest.split_at_mut(s);
            out.push(head);
            rest = tail;
        }
        out
    }

    pub fn capacity(&self) -> usize {
        self.buf.len()
    }
}

use rustc_hash::FxHashMap;
use sha2::{Digest, Sha256};

use super::layout::Layout;
use crate::error::{Error, Result};
use crate::lattice::LatticePoint;

/// Sparse visit counts `xi(x, n)`, stored as dense `u8` blocks of
/// neighbouring sites keyed by a compact block id, with an overflow map for
/// counts past `u8::MAX`.
#[derive(Clone, Debug)]
pub struct LocalTimeField {
    layout: Layout,
    index: FxHashMap<u128, u32>,
    keys: Vec<u128>,
    cells: Vec<u8>,
    overflow: FxHashMap<usize, u64>,
    total: u64,
    cap_cells: usize,
    cache_block: u128,
    cache_base: usize,
    cache_valid: bool,
}

impl LocalTimeField {
    pub fn new(dim: usize, cap_cells: usize) -> Self {
        Self::with_layout(Layout::new(dim), cap_cells)
    }

    pub(crate) fn with_layout(layout: Layout, cap_cells: usize) -> Self {
        Self {
            layout,
            index: FxHashMap::default(),
            keys: Vec::new(),
            cells: Vec::new(),
            overflow: FxHashMap::default(),
            total: 0,
            cap_cells,
            cache_block: 0,
            cache_base: 0,
            cache_valid: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    /// Number of recorded visits, `sum_x xi(x, n)`.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn blocks(&self) -> usize {
        self.keys.len()
    }

    /// Approximate heap footprint in bytes.
    pub fn memory_bytes(&self) -> usize {
        self.cells.capacity() + self.keys.capacity() * 16 + self.index.capacity() * 24 + self.overflow.capacity() * 24
    }

    fn slab_for(&mut self, key: u128) -> Result<usize> {
        let per = self.layout.cells_per_block();
        if let Some(&s) = self.index.get(&key) {
            return Ok(s as usize * per);
        }
        if self.cells.len() + per > self.cap_cells {
            return Err(Error::MemoryCap { cap: self.cap_cells });
        }
        let s = self.keys.len();
        self.keys.push(key);
        self.index.insert(key, s as u32);
        self.cells.resize(self.cells.len() + per, 0);
        Ok(s * per)
    }

    #[inline(always)]
    pub(crate) fn record(&mut self, pos: u128) -> Result<()> {
        self.add_packed(pos, 1)
    }

    #[inline(always)]
    fn add_packed(&mut self, pos: u128, count: u64) -> Result<()> {
        let blk = self.layout.block_of(pos);
        if !self.cache_valid || blk != self.cache_block {
            self.cache_base = self.slab_for(self.layout.block_key(pos))?;
            self.cache_block = blk;
            self.cache_valid = true;
        }
        let i = self.cache_base + self.layout.cell_index(pos);
        let c = &mut self.cells[i];
        let room = (u8::MAX - *c) as u64;
        if count <= room {
            *c += count as u8;
        } else {
            *c = u8::MAX;
            *self.overflow.entry(i).or_insert(0) += count - room;
        }
        self.total += count;
        Ok(())
    }

    fn cell_count(&self, i: usize) -> u64 {
        let c = self.cells[i];
        if c == u8::MAX {
            c as u64 + self.overflow.get(&i).copied().unwrap_or(0)
        } else {
            c as u64
        }
    }

    #[inline]
    pub(crate) fn get_packed(&self, pos: u128) -> u64 {
        match self.index.get(&self.layout.block_key(pos)) {
            Some(&s) => self.cell_count(s as usize * self.layout.cells_per_block() + self.layout.cell_index(pos)),
            None => 0,
        }
    }

    /// `xi(x, n)`; zero for unvisited or unpackable sites.
    pub fn get(&self, x: &LatticePoint) -> u64 {
        assert_eq!(x.dim(), self.dim());
        match self.layout.encode(x.coords()) {
            Ok(k) => self.get_packed(k),
            Err(_) => 0,
        }
    }

    /// Adds `count` visits to `x`.
    pub fn add(&mut self, x: &LatticePoint, count: u64) -> Result<()> {
        if count == 0 {
            return Ok(());
        }
        let k = self.layout.encode(x.coords())?;
        self.add_packed(k, count)
    }

    /// Visited sites with their counts, in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (LatticePoint, u64)> + '_ {
        let per = self.layout.cells_per_block();
        self.keys.iter().enumerate().flat_map(move |(s, &key)| {
            (0..per).filter_map(move |c| {
                let n = self.cell_count(s * per + c);
                (n > 0).then(|| (LatticePoint::new(self.layout.site(key, c)), n))
            })
        })
    }

    /// Number of distinct visited sites.
    pub fn distinct_sites(&self) -> usize {
        self.cells.iter().filter(|&&c| c > 0).count()
    }

    /// Visited sites with `xi >= k`, lexicographic.
    pub fn sites_at_least(&self, k: u64) -> Vec<(LatticePoint, u64)> {
        let per = self.layout.cells_per_block();
        let mut out = Vec::new();
        for (i, &c) in self.cells.iter().enumerate() {
            if c > 0 && (c as u64 >= k || c == u8::MAX) {
                let n = self.cell_count(i);
                if n >= k.max(1) {
                    out.push((LatticePoint::new(self.layout.site(self.keys[i / per], i % per)), n));
                }
            }
        }
        out.sort();
        out
    }

    /// The maximal local time and the lexicographically ordered set of sites
    /// attaining it.
    pub fn max_local_time(&self) -> (u64, Vec<LatticePoint>) {
        let mut best = 0u64;
        for i in 0..self.cells.len() {
            if self.cells[i] as u64 >= best.min(u8::MAX as u64) {
                best = best.max(self.cell_count(i));
            }
        }
        if best == 0 {
            return (0, Vec::new());
        }
        (best, self.sites_at_least(best).into_iter().map(|(x, _)| x).collect())
    }

    /// The `k` most visited sites, ties broken lexicographically.
    pub fn top_sites(&self, k: usize) -> Vec<(LatticePoint, u64)> {
        if k == 0 {
            return Vec::new();
        }
        // Lowest threshold that still keeps at least `k` sites, from a
        // histogram of the stored cell values.
        let mut hist = [0usize; 256];
        for &c in &self.cells {
            hist[c as usize] += 1;
        }
        let mut threshold = 1u64;
        let mut seen = 0usize;
        for v in (1..256).rev() {
            seen += hist[v];
            if seen >= k {
                threshold = v as u64;
                break;
            }
        }
        let mut top = self.sites_at_least(threshold);
        top.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        top.truncate(k);
        top
    }

    /// All `(site, count)` pairs, lexicographic.
    pub fn entries_sorted(&self) -> Vec<(LatticePoint, u64)> {
        let mut v: Vec<_> = self.iter().collect();
        v.sort();
        v
    }

    /// Adds every count of `other` into `self`.
    pub fn merge(&mut self, other: &LocalTimeField) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        for (x, n) in other.iter() {
            self.add(&x, n)?;
        }
        Ok(())
    }

    /// SHA-256 over visited sites in block-key order; independent of the
    /// order in which visits were recorded.
    pub fn digest(&self) -> String {
        let per = self.layout.cells_per_block();
        let mut order: Vec<(u128, usize)> = self.keys.iter().copied().zip(0..).collect();
        order.sort_unstable();
        let mut h = Sha256::new();
        h.update(self.total.to_le_bytes());
        for (key, s) in order {
            for c in 0..per {
                let n = self.cell_count(s * per + c);
                if n > 0 {
                    h.update(key.to_le_bytes());
                    h.update((c as u64).to_le_bytes());
                    h.update(n.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

impl PartialEq for LocalTimeField {
    fn eq(&self, other: &Self) -> bool {
        self.layout == other.layout && self.digest() == other.digest()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: &[i64]) -> LatticePoint {
        LatticePoint::new(v.to_vec())
    }

    #[test]
    fn counts_and_overflow() {
        let mut f = LocalTimeField::new(3, 1 << 20);
        let x = p(&[-3, 2, 9]);
        f.add(&x, 70_000).unwrap();
        f.add(&x, 5).unwrap();
        f.add(&p(&[0, 0, 0]), 1).unwrap();
        assert_eq!(f.get(&x), 70_005);
        assert_eq!(f.get(&p(&[1, 1, 1])), 0);
        assert_eq!(f.total(), 70_006);
        assert_eq!(f.distinct_sites(), 2);
        let (m, arg) = f.max_local_time();
        assert_eq!((m, arg), (70_005, vec![x.clone()]));
        assert_eq!(f.sites_at_least(1).len(), 2);
        assert_eq!(f.top_sites(1)[0].0, x);
    }

    #[test]
    fn argmax_is_complete_and_ordered() {
        let mut f = LocalTimeField::new(4, 1 << 20);
        for v in [[5, 0, 0, 0], [-1, 2, 0, 0], [0, 0, 0, 1]] {
            f.add(&p(&v), 3).unwrap();
        }
        f.add(&p(&[9, 9, 9, 9]), 2).unwrap();
        let (m, arg) = f.max_local_time();
        assert_eq!(m, 3);
        assert_eq!(arg, vec![p(&[-1, 2, 0, 0]), p(&[0, 0, 0, 1]), p(&[5, 0, 0, 0])]);
    }

    #[test]
    fn cap_is_enforced() {
        let mut f = LocalTimeField::new(3, 64);
        f.add(&p(&[0, 0, 0]), 1).unwrap();
        assert!(matches!(f.add(&p(&[100, 0, 0]), 1), Err(Error::MemoryCap { .. })));
    }

    #[test]
    fn merge_conserves_totals() {
        let mut a = LocalTimeField::new(3, 1 << 20);
        let mut b = LocalTimeField::new(3, 1 << 20);
        a.add(&p(&[1, 0, 0]), 4).unwrap();
        b.add(&p(&[1, 0, 0]), 2).unwrap();
        b.add(&p(&[-7, 0, 5]), 1).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a.total(), 7);
        assert_eq!(a.get(&p(&[1, 0, 0])), 6);
        let sum: u64 = a.iter().map(|(_, n)| n).sum();
        assert_eq!(sum, a.total());
    }
}

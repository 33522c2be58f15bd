use crate::error::{Error, Result};

/// Packing of lattice points into a `u128` (one biased field per axis); a
/// block of `side^d` sites is keyed by its corner's packed value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub dim: usize,
    bits: u32,
    side_log: u32,
    pub limit: i64,
    block_mask: u128,
}

impl Layout {
    pub fn new(dim: usize) -> Self {
        assert!((1..=64).contains(&dim));
        let bits = (128 / dim as u32).min(48);
        let side_log = match dim {
            0..=3 => 2,
            4..=8 => 1,
            _ => 0,
        };
        let limit = (1i64 << (bits - 1)) - 1;
        let low = (1u128 << side_log) - 1;
        let mut clear = 0u128;
        for i in 0..dim {
            clear |= low << (i as u32 * bits);
        }
        Self { dim, bits, side_log, limit, block_mask: !clear }
    }

    pub fn cells_per_block(&self) -> usize {
        1usize << (self.side_log as usize * self.dim)
    }

    #[inline]
    fn field(&self, k: u128, i: usize) -> u64 {
        ((k >> (i as u32 * self.bits)) & ((1u128 << self.bits) - 1)) as u64
    }

    #[inline]
    fn bias(&self) -> u64 {
        1u64 << (self.bits - 1)
    }

    pub fn encode(&self, x: &[i64]) -> Result<u128> {
        debug_assert_eq!(x.len(), self.dim);
        let mut k = 0u128;
        for (i, &c) in x.iter().enumerate() {
            if c.abs() > self.limit {
                return Err(Error::OutOfPackableRange { limit: self.limit });
            }
            k |= ((c + self.bias() as i64) as u128) << (i as u32 * self.bits);
        }
        Ok(k)
    }

    pub fn decode(&self, k: u128) -> Vec<i64> {
        (0..self.dim).map(|i| self.field(k, i) as i64 - self.bias() as i64).collect()
    }

    /// Wrapping increment that moves a packed point by `x`.
    pub fn delta(&self, x: &[i64]) -> u128 {
        x.iter().enumerate().fold(0u128, |acc, (i, &c)| {
            acc.wrapping_add((c as i128 as u128).wrapping_shl(i as u32 * self.bits))
        })
    }

    /// Largest `|x_i|` of a packed point.
    pub fn max_abs(&self, k: u128) -> i64 {
        (0..self.dim).map(|i| (self.field(k, i) as i64 - self.bias() as i64).abs()).max().unwrap_or(0)
    }

    #[inline(always)]
    pub fn block_of(&self, k: u128) -> u128 {
        k & self.block_mask
    }

    #[inline(always)]
    pub fn cell_index(&self, k: u128) -> usize {
        if self.side_log == 0 {
            return 0;
        }
        let low = (1u64 << self.side_log) - 1;
        let mut idx = 0usize;
        for i in 0..self.dim {
            idx |= ((self.field(k, i) & low) as usize) << (i as u32 * self.side_log);
        }
        idx
    }

    #[inline(always)]
    pub fn block_key(&self, k: u128) -> u128 {
        self.block_of(k)
    }

    /// The site at `cell` of the block with key `key`.
    pub fn site(&self, key: u128, cell: usize) -> Vec<i64> {
        let low = (1usize << self.side_log) - 1;
        (0..self.dim)
            .map(|i| {
                let off = (cell >> (i as u32 * self.side_log)) & low;
                self.field(key, i) as i64 - self.bias() as i64 + off as i64
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for d in [3, 4, 5, 8, 9, 20] {
            let l = Layout::new(d);
            let mut x: Vec<i64> = (0..d as i64).map(|i| (i * 37 - 50).clamp(1 - l.limit, l.limit - 1)).collect();
            x[0] = -l.limit;
            let k = l.encode(&x).unwrap();
            assert_eq!(l.decode(k), x);
            assert_eq!(l.site(l.block_key(k), l.cell_index(k)), x);
            let step: Vec<i64> = (0..d as i64).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
            let moved: Vec<i64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
            assert_eq!(l.decode(k.wrapping_add(l.delta(&step))), moved);
            assert_eq!(l.max_abs(k), l.limit);
        }
    }

    #[test]
    fn blocks_partition_sites() {
        let l = Layout::new(3);
        let a = l.encode(&[4, -4, 0]).unwrap();
        let b = l.encode(&[7, -1, 3]).unwrap();
        let c = l.encode(&[8, -1, 3]).unwrap();
        assert_eq!(l.block_of(a), l.block_of(b));
        assert_ne!(l.block_of(b), l.block_of(c));
        assert_eq!(l.cells_per_block(), 64);
        assert!(l.encode(&[l.limit + 1, 0, 0]).is_err());
    }
}

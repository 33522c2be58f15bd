//! Reproducible random streams and O(1) discrete sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator for replica `stream` of base seed `seed`. Distinct streams
/// are disjoint keystreams of the same key, so shards never overlap and can
/// be merged in any order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Vose alias table driven by a single 64-bit draw per sample: the high 32
/// bits pick the column, the low 32 bits decide between column and alias.
#[derive(Clone, Debug)]
pub struct AliasTable {
    threshold: Vec<u32>,
    alias: Vec<u32>,
}

impl AliasTable {
    pub fn new(weights: &[f64]) -> Self {
        let m = weights.len();
        assert!(m > 0 && m <= u32::MAX as usize);
        let total: f64 = weights.iter().sum();
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * m as f64 / total).collect();
        let mut small = Vec::new();
        let mut large = Vec::new();
        for (i, &p) in scaled.iter().enumerate() {
            if p < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        let mut prob = vec![1.0; m];
        let mut alias: Vec<u32> = (0..m as u32).collect();
        while let (Some(s), Some(&l)) = (small.pop(), large.last()) {
            prob[s] = scaled[s];
            alias[s] = l as u32;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        let threshold = prob
            .iter()
            .map(|&p| if p >= 1.0 { u32::MAX } else { (p * 4_294_967_296.0) as u32 })
            .collect();
        Self { threshold, alias }
    }

    pub fn len(&self) -> usize {
        self.threshold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.threshold.is_empty()
    }

    #[inline(always)]
    pub fn sample(&self, u: u64) -> usize {
        let col = (((u >> 32) * self.threshold.len() as u64) >> 32) as usize;
        // `u32::MAX` marks a full column; the one-in-2^32 draw equal to it stays.
        let t = self.threshold[col];
        if (u as u32) < t || t == u32::MAX {
            col
        } else {
            self.alias[col] as usize
        }
    }

    /// Probability the table assigns to outcome `i`.
    pub fn probability(&self, i: usize) -> f64 {
        let m = self.len() as f64;
        let own = |c: usize| {
            let t = self.threshold[c];
            if t == u32::MAX {
                1.0
            } else {
                t as f64 / 4_294_967_296.0
            }
        };
        let mut p = own(i);
        for c in 0..self.len() {
            if c != i && self.alias[c] as usize == i {
                p += 1.0 - own(c);
            }
        }
        p / m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: Vec<u64> = (0..4).map({
            let mut r = stream_rng(7, 0);
            move |_| r.next_u64()
        }).collect();
        let mut r0 = stream_rng(7, 0);
        let mut r1 = stream_rng(7, 1);
        assert_eq!(a, (0..4).map(|_| r0.next_u64()).collect::<Vec<_>>());
        assert_ne!(a[0], r1.next_u64());
    }

    #[test]
    fn alias_reproduces_weights() {
        let w = [0.1, 0.2, 0.3, 0.4, 0.0];
        let t = AliasTable::new(&w);
        for (i, &wi) in w.iter().enumerate() {
            assert!((t.probability(i) - wi).abs() < 1e-9, "{i}");
        }
        let uniform = AliasTable::new(&[1.0; 6]);
        for i in 0..6 {
            assert!((uniform.probability(i) - 1.0 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn alias_empirical() {
        let w = [0.5, 0.25, 0.125, 0.125];
        let t = AliasTable::new(&w);
        let mut rng = stream_rng(1, 0);
        let mut counts = [0u64; 4];
        let n = 400_000;
        for _ in 0..n {
            counts[t.sample(rng.next_u64())] += 1;
        }
        for i in 0..4 {
            let p = w[i];
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((counts[i] as f64 / n as f64 - p).abs() < 5.0 * sd);
        }
    }
}

//! Compensated (Neumaier) summation.
//!
//! Every reduction whose result is persisted or compared across worker counts
//! goes through [`NeumaierSum`] and is combined in a fixed order, which keeps
//! results bit-identical no matter how the work was split.

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub const fn new() -> Self {
        Self { sum: 0.0, comp: 0.0 }
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    /// Folds another partial sum into this one, keeping both compensation terms.
    pub fn merge(&mut self, other: &NeumaierSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = NeumaierSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<NeumaierSum>().value()
}

/// Combines partial sums pairwise in a fixed binary-tree order.
pub fn tree_combine(parts: &[NeumaierSum]) -> NeumaierSum {
    match parts.len() {
        0 => NeumaierSum::new(),
        1 => parts[0],
        n => {
            let (l, r) = parts.split_at(n / 2);
            let mut acc = tree_combine(l);
            acc.merge(&tree_combine(r));
            acc
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_cancelled_terms() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(xs), 2.0);
        assert_eq!(xs.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn tree_order_is_split_independent() {
        let parts: Vec<NeumaierSum> = (0..37)
            .map(|i| std::iter::once(1.0 / (i as f64 + 1.0)).collect())
            .collect();
        let a = tree_combine(&parts).value();
        let b = tree_combine(&parts).value();
        assert_eq!(a.to_bits(), b.to_bits());
        let direct = compensated_sum((0..37).map(|i| 1.0 / (i as f64 + 1.0)));
        assert!((a - direct).abs() < 1e-15);
    }
}

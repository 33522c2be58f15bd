//! Step-iteration oracle for the Green function: `P(S_n = y)` is propagated by
//! exact convolution with the step law and summed over `n <= n_max`.
//!
//! States live in a Euclidean ball of radius `radius`; mass that would step
//! outside is dropped and reported as leakage. When the law is invariant under
//! coordinate sign flips (and permutations), only one representative per orbit
//! is stored, which shrinks the state space by up to `2^d d!`.
//!
//! The tail `sum_{n > n_max} P(S_n = x)` is controlled by the local bound
//! `P(S_n = x) <= C n^{-d/2}`: `C` is fitted on the second half of the computed
//! sequence and turned into both a bound and a point estimate of the tail.

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::lattice::{LatticePoint, StepDistribution, Symmetry};
use crate::sum::NeumaierSum;

/// Maximum tolerated mass leaking through the truncation boundary.
pub const MAX_LEAKAGE: f64 = 1e-12;

/// Safety factor on the fitted local-bound constant.
const TAIL_SAFETY: f64 = 1.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DpValue {
    /// `sum_{n=0}^{n_max} P(S_n = x)`.
    pub value: f64,
    /// Upper bound on the omitted tail, `C n_max^{1-d/2}` plus leakage.
    pub tail_bound: f64,
    /// Point estimate of the omitted tail from the fitted asymptote.
    pub tail_estimate: f64,
}

impl DpValue {
    pub fn extrapolated(&self) -> f64 {
        self.value + self.tail_estimate
    }
}

#[derive(Clone, Debug)]
pub struct DpRun {
    pub n_max: usize,
    pub radius: i64,
    pub states: usize,
    pub leakage: f64,
    pub values: Vec<DpValue>,
    /// `terms[k][n] = P(S_n = x_k)`.
    pub terms: Vec<Vec<f64>>,
    /// `max_y P(S_n = y) * n^{d/2}` for each `n >= 1` (index 0 unused).
    pub max_term_scaled: Vec<f64>,
}

/// Diffusive truncation radius: nine standard deviations of the largest
/// principal direction, never more than the reachable radius.
pub fn default_radius(dist: &StepDistribution, n_max: usize) -> i64 {
    let step = max_step_euclid(dist);
    let reach = (n_max as f64 * step).ceil() as i64;
    let sigma = (dist.covariance().q().symmetric_eigenvalues().max() * n_max as f64).sqrt();
    let heuristic = (9.0 * sigma + 2.0 * step).ceil() as i64;
    heuristic.min(reach).max(1)
}

fn max_step_euclid(dist: &StepDistribution) -> f64 {
    dist.support().iter().map(|(y, _)| y.euclid()).fold(0.0, f64::max)
}

pub fn green_dp_oracle(
    x: &LatticePoint,
    dist: &StepDistribution,
    n_max: usize,
    radius: Option<i64>,
) -> Result<DpValue> {
    Ok(dp_oracle(std::slice::from_ref(x), dist, n_max, radius)?.values[0])
}

pub fn dp_oracle(
    xs: &[LatticePoint],
    dist: &StepDistribution,
    n_max: usize,
    radius: Option<i64>,
) -> Result<DpRun> {
    let d = dist.dim();
    for x in xs {
        if x.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.dim() });
        }
    }
    run(xs, dist, n_max, radius, dist.symmetry())
}

fn run(
    xs: &[LatticePoint],
    dist: &StepDistribution,
    n_max: usize,
    radius: Option<i64>,
    sym: Symmetry,
) -> Result<DpRun> {
    let d = dist.dim();
    let radius = radius.unwrap_or_else(|| default_radius(dist, n_max));
    let space = StateSpace::new(d, radius, sym);
    let n = space.points.len();

    let total_p: f64 = crate::sum::compensated_sum(dist.support().iter().map(|(_, p)| *p));
    let steps: Vec<(&LatticePoint, f64)> =
        dist.support().iter().map(|(y, p)| (y, p / total_p)).collect();
    let ns = steps.len();
    // Gather table: state i pulls from canonical(y_i - s) for every step s.
    let mut gather = vec![n as u32; n * ns];
    for (i, y) in space.points.iter().enumerate() {
        for (k, (s, _)) in steps.iter().enumerate() {
            if let Some(j) = space.index_of(&y.sub(s)) {
                gather[i * ns + k] = j as u32;
            }
        }
    }
    let probs: Vec<f64> = steps.iter().map(|(_, p)| *p).collect();
    let orbit: Vec<f64> = space.points.iter().map(|y| sym.orbit_size(y) as f64).collect();
    let targets: Vec<Option<usize>> = xs.iter().map(|x| space.index_of(x)).collect();

    let step = max_step_euclid(dist);
    let mut old = vec![0.0; n + 1];
    let mut new = vec![0.0; n + 1];
    old[0] = 1.0; // the origin sorts first
    let mut terms: Vec<Vec<f64>> = targets
        .iter()
        .map(|t| vec![if *t == Some(0) { 1.0 } else { 0.0 }])
        .collect();
    let mut max_term_scaled = vec![f64::NAN];
    let mut mass = 1.0;
    for m in 1..=n_max {
        let reach = m as f64 * step;
        let active = space.active_count(reach * reach);
        let mut max_term = 0.0f64;
        let mut mass_acc = NeumaierSum::new();
        for i in 0..active {
            let row = &gather[i * ns..(i + 1) * ns];
            let mut acc = 0.0;
            for (g, p) in row.iter().zip(&probs) {
                acc += p * old[*g as usize];
            }
            new[i] = acc;
            max_term = max_term.max(acc);
            mass_acc.add(acc * orbit[i]);
        }
        std::mem::swap(&mut old, &mut new);
        mass = mass_acc.value();
        max_term_scaled.push(max_term * (m as f64).powf(d as f64 / 2.0));
        for (t, seq) in targets.iter().zip(terms.iter_mut()) {
            seq.push(t.map_or(0.0, |j| old[j]));
        }
    }
    let leakage = (1.0 - mass).max(0.0);
    if leakage > MAX_LEAKAGE {
        return Err(Error::BoxTooSmall { leakage });
    }
    let c_global = global_constant(&max_term_scaled, d);
    let values = terms
        .iter()
        .map(|seq| {
            let value = crate::sum::compensated_sum(seq.iter().copied());
            let (tail_bound, tail_estimate) = tail_fit(seq, d, c_global);
            DpValue { value, tail_bound: tail_bound + 10.0 * leakage, tail_estimate }
        })
        .collect();
    Ok(DpRun { n_max, radius, states: n, leakage, values, terms, max_term_scaled })
}

/// Largest pair-averaged `max_y P(S_n = y) n^{d/2}` over the second half of the
/// run. Far sites approach their local-limit constant from below, so their own
/// fitted constant would understate the tail; this one dominates every site.
fn global_constant(max_term_scaled: &[f64], d: usize) -> f64 {
    let n_max = max_term_scaled.len() - 1;
    if n_max < 16 {
        return f64::INFINITY;
    }
    let s = d as f64 / 2.0;
    (n_max / 2..n_max)
        .map(|m| {
            let mid = m as f64 + 0.5;
            let a = max_term_scaled[m] * (mid / m as f64).powf(s);
            let b = max_term_scaled[m + 1] * (mid / (m + 1) as f64).powf(s);
            0.5 * (a + b)
        })
        .fold(0.0, f64::max)
}

/// Fits `P(S_n = x) ~ (C + D/n) n^{-d/2}` on the second half of the sequence.
///
/// Consecutive terms are averaged in pairs so that bipartite parity zeros do
/// not matter. Returns `(bound, estimate)`; both are infinite when fewer than
/// sixteen terms are available.
fn tail_fit(seq: &[f64], d: usize, c_global: f64) -> (f64, f64) {
    let n_max = seq.len() - 1;
    if n_max < 16 {
        return (f64::INFINITY, f64::INFINITY);
    }
    let s = d as f64 / 2.0;
    let pts: Vec<(f64, f64)> = (n_max / 2..n_max)
        .map(|m| {
            let mid = m as f64 + 0.5;
            (1.0 / mid, 0.5 * (seq[m] + seq[m + 1]) * mid.powf(s))
        })
        .collect();
    let c_max = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    let k = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / k, sy / k);
    let (sxx, sxy) = pts
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + (p.0 - mx).powi(2), a.1 + (p.0 - mx) * (p.1 - my)));
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let c = my - slope * mx;
    let nm = n_max as f64;
    let bound = TAIL_SAFETY * c_max.max(c_global) / (s - 1.0) * nm.powf(1.0 - s);
    // Midpoint rule for the sums over n > n_max.
    let start = nm + 0.5;
    let estimate = c * start.powf(1.0 - s) / (s - 1.0) + slope * start.powf(-s) / s;
    (bound, estimate.max(0.0))
}

/// Canonical lattice points of a Euclidean ball, sorted by `(|y|^2, y)`.
struct StateSpace {
    dim: usize,
    radius: i64,
    sym: Symmetry,
    points: Vec<LatticePoint>,
    norms: Vec<i64>,
    index: FxHashMap<u64, u32>,
}

impl StateSpace {
    fn new(dim: usize, radius: i64, sym: Symmetry) -> Self {
        let r2 = radius * radius;
        let mut pts: Vec<(i64, LatticePoint)> = Vec::new();
        let mut cur = vec![0i64; dim];
        enumerate(&mut cur, 0, r2, 0, sym, radius, &mut |c| {
            let p = LatticePoint::new(c.to_vec());
            pts.push((p.euclid_sq(), p));
        });
        pts.sort();
        let mut space = Self {
            dim,
            radius,
            sym,
            points: Vec::with_capacity(pts.len()),
            norms: Vec::with_capacity(pts.len()),
            index: FxHashMap::default(),
        };
        space.index.reserve(pts.len());
        for (i, (n2, p)) in pts.into_iter().enumerate() {
            space.index.insert(space.key(&p), i as u32);
            space.norms.push(n2);
            space.points.push(p);
        }
        space
    }

    fn key(&self, y: &LatticePoint) -> u64 {
        let base = (2 * self.radius + 1) as u64;
        y.coords().iter().fold(0u64, |acc, &c| acc * base + (c + self.radius) as u64)
    }

    fn index_of(&self, y: &LatticePoint) -> Option<usize> {
        debug_assert_eq!(y.dim(), self.dim);
        if y.euclid_sq() > self.radius * self.radius {
            return None;
        }
        let c = self.sym.canonical(y);
        self.index.get(&self.key(&c)).map(|&i| i as usize)
    }

    fn active_count(&self, reach_sq: f64) -> usize {
        self.norms.partition_point(|&n2| (n2 as f64) <= reach_sq + 1e-9)
    }
}

fn enumerate(
    cur: &mut [i64],
    axis: usize,
    budget: i64,
    lower: i64,
    sym: Symmetry,
    radius: i64,
    emit: &mut dyn FnMut(&[i64]),
) {
    if axis == cur.len() {
        emit(cur);
        return;
    }
    let lo = if sym.sign_flips {
        if sym.permutations {
            lower
        } else {
            0
        }
    } else {
        -radius
    };
    for v in lo..=radius {
        if v * v > budget {
            if v >= 0 {
                break;
            }
            continue;
        }
        cur[axis] = v;
        // Sorted representatives need the remaining coordinates >= v.
        let rest = (cur.len() - axis - 1) as i64;
        if sym.permutations && v * v * (rest + 1) > budget {
            break;
        }
        enumerate(cur, axis + 1, budget - v * v, v, sym, radius, emit);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_steps() {
        let d = StepDistribution::simple(3).unwrap();
        let r = dp_oracle(&[LatticePoint::origin(3), LatticePoint::unit(3, 0)], &d, 0, None).unwrap();
        assert_eq!(r.values[0].value, 1.0);
        assert_eq!(r.values[1].value, 0.0);
    }

    #[test]
    fn parity_zeros_and_small_steps() {
        let d = StepDistribution::simple(3).unwrap();
        let r = dp_oracle(&[LatticePoint::origin(3)], &d, 40, None).unwrap();
        let t = &r.terms[0];
        assert_eq!(t[0], 1.0);
        for n in (1..=40).step_by(2) {
            assert_eq!(t[n], 0.0, "odd n = {n}");
        }
        // P(S_2 = 0) = 1/6 for the simple walk in d = 3.
        assert!((t[2] - 1.0 / 6.0).abs() < 1e-16);
        // P(S_4 = 0) = (1/6^4) * sum over (a,b,c), a+b+c=2 of 4!/(a!a!b!b!c!c!) = 90/1296.
        assert!((t[4] - 90.0 / 1296.0).abs() < 1e-16);
    }

    #[test]
    fn reduced_states_match_full_space() {
        let d = StepDistribution::simple(3).unwrap();
        let xs = [LatticePoint::origin(3), LatticePoint::new(vec![1, 2, 0]), LatticePoint::new(vec![-2, 1, 1])];
        let reduced = dp_oracle(&xs, &d, 30, Some(31)).unwrap();
        let full = run(&xs, &d, 30, Some(31), Symmetry::NONE).unwrap();
        assert!(full.states > 40 * reduced.states);
        for k in 0..xs.len() {
            for n in 0..=30 {
                assert!((reduced.terms[k][n] - full.terms[k][n]).abs() <= 1e-14 * full.terms[k][n]);
            }
        }
        assert!(reduced.leakage < 1e-14);
    }

    #[test]
    fn small_box_leaks() {
        let d = StepDistribution::simple(3).unwrap();
        assert!(matches!(
            dp_oracle(&[LatticePoint::origin(3)], &d, 200, Some(5)),
            Err(Error::BoxTooSmall { .. })
        ));
    }

    #[test]
    fn local_bound_is_bounded() {
        let d = StepDistribution::simple(3).unwrap();
        let r = dp_oracle(&[LatticePoint::origin(3)], &d, 300, None).unwrap();
        let window = &r.max_term_scaled[10..];
        let hi = window.iter().cloned().fold(0.0, f64::max);
        let lo_tail = window[window.len() - 20..].iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(hi < 2.0 * lo_tail, "hi {hi}, late {lo_tail}");
    }
}

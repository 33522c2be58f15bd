//! Step distributions on `Z^d`, their covariance geometry and Q-norm balls.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Total-probability tolerance for a valid step law.
pub const PROB_SUM_TOL: f64 = 1e-12;
/// Relative slack used when comparing a quadratic form against `r^2`.
pub const BALL_SLACK: f64 = 1e-9;
/// Default cap on the number of points a ball enumeration may return.
pub const DEFAULT_BALL_CAP: usize = 2_000_000;

/// A point of the integer lattice, ordered lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticePoint(Vec<i64>);

impl LatticePoint {
    pub fn new(coords: Vec<i64>) -> Self {
        Self(coords)
    }

    pub fn origin(dim: usize) -> Self {
        Self(vec![0; dim])
    }

    /// The unit vector along `axis` (0-based).
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut c = vec![0; dim];
        c[axis] = 1;
        Self(c)
    }

    pub fn axis(dim: usize, axis: usize, k: i64) -> Self {
        let mut c = vec![0; dim];
        c[axis] = k;
        Self(c)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn is_origin(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn neg(&self) -> Self {
        Self(self.0.iter().map(|c| -c).collect())
    }

    pub fn add(&self, other: &LatticePoint) -> Self {
        debug_assert_eq!(self.dim(), other.dim());
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &LatticePoint) -> Self {
        debug_assert_eq!(self.dim(), other.dim());
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn norm1(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).sum()
    }

    pub fn norm_inf(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn euclid_sq(&self) -> i64 {
        self.0.iter().map(|c| c * c).sum()
    }

    pub fn euclid(&self) -> f64 {
        (self.euclid_sq() as f64).sqrt()
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl FromStr for LatticePoint {
    type Err = Error;

    /// Accepts `1,0,0`, `(1,0,0)` or `1 0 0`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches('(').trim_end_matches(')');
        let coords = t
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|p| !p.is_empty())
            .map(|p| {
                p.parse::<i64>()
                    .map_err(|_| Error::Parse(format!("bad coordinate {p:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if coords.is_empty() {
            return Err(Error::Parse(format!("empty lattice point {s:?}")));
        }
        Ok(Self(coords))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    SimpleSymmetric,
    Custom,
}

/// Which coordinate symmetries the step law is invariant under.
///
/// Used to fold Green tables, DP states and quadrature domains onto a
/// fundamental region.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Symmetry {
    pub sign_flips: bool,
    pub permutations: bool,
}

impl Symmetry {
    pub const NONE: Symmetry = Symmetry { sign_flips: false, permutations: false };

    /// Representative of the orbit of `x`: absolute values when sign flips are
    /// symmetries, additionally sorted ascending under coordinate permutations.
    pub fn canonical(&self, x: &LatticePoint) -> LatticePoint {
        let mut c = x.0.clone();
        if self.sign_flips {
            for v in c.iter_mut() {
                *v = v.abs();
            }
            if self.permutations {
                c.sort_unstable();
            }
        }
        LatticePoint(c)
    }

    /// Number of distinct lattice points in the orbit of `x`.
    pub fn orbit_size(&self, x: &LatticePoint) -> u64 {
        if !self.sign_flips {
            return 1;
        }
        let nonzero = x.0.iter().filter(|&&c| c != 0).count();
        let mut size = 1u64 << nonzero;
        if self.permutations {
            let mut abs: Vec<i64> = x.0.iter().map(|c| c.abs()).collect();
            abs.sort_unstable();
            let d = abs.len() as u64;
            let mut perms: u64 = (1..=d).product();
            let mut i = 0;
            while i < abs.len() {
                let mut j = i;
                while j < abs.len() && abs[j] == abs[i] {
                    j += 1;
                }
                perms /= (1..=(j - i) as u64).product::<u64>();
                i = j;
            }
            size *= perms;
        }
        size
    }
}

/// Covariance matrix `Q` of one step with its inverse and determinant.
#[derive(Clone, Debug)]
pub struct CovarianceData {
    q: DMatrix<f64>,
    q_inv: DMatrix<f64>,
    det: f64,
    /// `Some(d)` when `Q = I/d` exactly, so that `x Q^-1 x = d |x|^2` in integers.
    exact_scale: Option<i64>,
}

impl CovarianceData {
    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn q_inv(&self) -> &DMatrix<f64> {
        &self.q_inv
    }

    pub fn det(&self) -> f64 {
        self.det
    }

    pub fn is_exact(&self) -> bool {
        self.exact_scale.is_some()
    }

    fn from_matrix(q: DMatrix<f64>, exact_scale: Option<i64>) -> Result<Self> {
        let d = q.nrows();
        let chol = q.clone().cholesky().ok_or_else(|| {
            Error::BadProbabilities("covariance matrix is not positive definite".into())
        })?;
        let q_inv = match exact_scale {
            Some(s) => DMatrix::identity(d, d) * s as f64,
            None => chol.inverse(),
        };
        let det = match exact_scale {
            Some(s) => (s as f64).powi(-(d as i32)),
            None => chol.determinant(),
        };
        Ok(Self { q, q_inv, det, exact_scale })
    }
}

/// A validated finite symmetric aperiodic step law on `Z^d`.
#[derive(Clone, Debug)]
pub struct StepDistribution {
    dim: usize,
    kind: StepKind,
    support: Vec<(LatticePoint, f64)>,
    cov: CovarianceData,
    symmetry: Symmetry,
}

/// What to build: the simple symmetric walk or an explicit support list.
#[derive(Clone, Debug, PartialEq)]
pub enum DistSpec {
    Simple,
    Support(Vec<(LatticePoint, f64)>),
}

/// Builds and validates a step distribution.
pub fn build_distribution(dim: usize, spec: &DistSpec) -> Result<StepDistribution> {
    match spec {
        DistSpec::Simple => StepDistribution::simple(dim),
        DistSpec::Support(s) => StepDistribution::custom(dim, s.clone()),
    }
}

impl StepDistribution {
    /// The simple symmetric walk: mass `1/(2d)` on each of `±e_i`.
    pub fn simple(dim: usize) -> Result<Self> {
        if dim < 3 {
            return Err(Error::DimensionTooSmall { dim });
        }
        let p = 1.0 / (2 * dim) as f64;
        let mut support = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            support.push((LatticePoint::unit(dim, i), p));
            support.push((LatticePoint::unit(dim, i).neg(), p));
        }
        support.sort_by(|a, b| a.0.cmp(&b.0));
        let q = DMatrix::identity(dim, dim) / dim as f64;
        let cov = CovarianceData::from_matrix(q, Some(dim as i64))?;
        Ok(Self {
            dim,
            kind: StepKind::SimpleSymmetric,
            support,
            cov,
            symmetry: Symmetry { sign_flips: true, permutations: true },
        })
    }

    pub fn custom(dim: usize, support: Vec<(LatticePoint, f64)>) -> Result<Self> {
        if dim < 3 {
            return Err(Error::DimensionTooSmall { dim });
        }
        if support.is_empty() {
            return Err(Error::BadProbabilities("empty support".into()));
        }
        let mut merged: std::collections::BTreeMap<LatticePoint, f64> = Default::default();
        for (x, p) in support {
            if x.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: x.dim() });
            }
            if !p.is_finite() || p < 0.0 {
                return Err(Error::BadProbabilities(format!("p{x} = {p} is not a probability")));
            }
            *merged.entry(x).or_insert(0.0) += p;
        }
        let total: f64 = crate::sum::compensated_sum(merged.values().copied());
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::BadProbabilities(format!("probabilities sum to {total}, not 1")));
        }
        merged.retain(|_, p| *p > 0.0);
        for (x, &p) in &merged {
            let p_neg = merged.get(&x.neg()).copied().unwrap_or(0.0);
            if (p - p_neg).abs() > PROB_SUM_TOL {
                return Err(Error::AsymmetricLaw { point: x.to_string(), p, p_neg });
            }
        }
        let support: Vec<(LatticePoint, f64)> = merged.into_iter().collect();
        let (rank, index) = generated_lattice(dim, support.iter().map(|(x, _)| x));
        if rank != dim || index != 1 {
            return Err(Error::NotAperiodic { rank, index });
        }

        let mut q = DMatrix::zeros(dim, dim);
        for (x, p) in &support {
            for i in 0..dim {
                for j in 0..dim {
                    q[(i, j)] += p * (x.0[i] * x.0[j]) as f64;
                }
            }
        }
        let cov = CovarianceData::from_matrix(q, None)?;
        let symmetry = detect_symmetry(dim, &support);
        Ok(Self { dim, kind: StepKind::Custom, support, cov, symmetry })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> StepKind {
        self.kind
    }

    pub fn support(&self) -> &[(LatticePoint, f64)] {
        &self.support
    }

    pub fn covariance(&self) -> &CovarianceData {
        &self.cov
    }

    pub fn symmetry(&self) -> Symmetry {
        self.symmetry
    }

    pub fn is_simple(&self) -> bool {
        self.kind == StepKind::SimpleSymmetric
    }

    /// Largest `|x_i|` over the support.
    pub fn max_step_inf(&self) -> i64 {
        self.support.iter().map(|(x, _)| x.norm_inf()).max().unwrap_or(0)
    }

    /// `p(x)`, zero off the support.
    pub fn prob(&self, x: &LatticePoint) -> f64 {
        self.support
            .binary_search_by(|(y, _)| y.cmp(x))
            .map(|i| self.support[i].1)
            .unwrap_or(0.0)
    }

    /// Characteristic function `sum_y p(y) cos(theta . y)`.
    pub fn char_fn(&self, theta: &[f64]) -> f64 {
        crate::sum::compensated_sum(self.support.iter().map(|(y, p)| {
            let dot: f64 = y.0.iter().zip(theta).map(|(&c, t)| c as f64 * t).sum();
            p * dot.cos()
        }))
    }

    /// Canonical text form; also the input to [`Self::content_hash`].
    pub fn to_spec_text(&self) -> String {
        let mut s = format!("dim={}\n", self.dim);
        if self.is_simple() {
            s.push_str("simple\n");
            return s;
        }
        for (x, p) in &self.support {
            let coords: Vec<String> = x.0.iter().map(|c| c.to_string()).collect();
            s.push_str(&format!("{} : {:.17e}\n", coords.join(" "), p));
        }
        s
    }

    /// Hex SHA-256 of the canonical text form.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_spec_text().as_bytes()))
    }

    pub fn label(&self) -> String {
        match self.kind {
            StepKind::SimpleSymmetric => format!("srw-d{}", self.dim),
            StepKind::Custom => format!("custom-d{}-{}", self.dim, &self.content_hash()[..12]),
        }
    }
}

fn detect_symmetry(dim: usize, support: &[(LatticePoint, f64)]) -> Symmetry {
    let lookup = |x: &LatticePoint| -> f64 {
        support.binary_search_by(|(y, _)| y.cmp(x)).map(|i| support[i].1).unwrap_or(0.0)
    };
    let invariant = |f: &dyn Fn(&LatticePoint) -> LatticePoint| {
        support.iter().all(|(x, p)| (lookup(&f(x)) - p).abs() <= PROB_SUM_TOL)
    };
    let sign_flips = (0..dim).all(|i| {
        invariant(&|x: &LatticePoint| {
            let mut c = x.0.clone();
            c[i] = -c[i];
            LatticePoint(c)
        })
    });
    let permutations = (0..dim - 1).all(|i| {
        invariant(&|x: &LatticePoint| {
            let mut c = x.0.clone();
            c.swap(i, i + 1);
            LatticePoint(c)
        })
    });
    Symmetry { sign_flips, permutations: sign_flips && permutations }
}

/// Rank and index of the integer lattice generated by `vectors`, via Hermite
/// row reduction. The index is only meaningful when the rank is full.
pub fn generated_lattice<'a>(
    dim: usize,
    vectors: impl IntoIterator<Item = &'a LatticePoint>,
) -> (usize, u128) {
    let mut rows: Vec<Vec<i128>> = vectors
        .into_iter()
        .map(|x| x.0.iter().map(|&c| c as i128).collect())
        .filter(|r: &Vec<i128>| r.iter().any(|&c| c != 0))
        .collect();
    let mut pivot_row = 0;
    let mut index: u128 = 1;
    for col in 0..dim {
        loop {
            // Smallest nonzero entry in this column at or below the pivot row.
            let best = (pivot_row..rows.len())
                .filter(|&r| rows[r][col] != 0)
                .min_by_key(|&r| rows[r][col].unsigned_abs());
            let Some(best) = best else { break };
            rows.swap(pivot_row, best);
            let pivot = rows[pivot_row][col];
            let mut done = true;
            for r in pivot_row + 1..rows.len() {
                let f = rows[r][col] / pivot;
                if f != 0 {
                    for c in col..dim {
                        rows[r][c] -= f * rows[pivot_row][c];
                    }
                }
                if rows[r][col] != 0 {
                    done = false;
                }
            }
            if done {
                index = index.saturating_mul(pivot.unsigned_abs());
                pivot_row += 1;
                break;
            }
        }
        if pivot_row == rows.len() && col + 1 < dim {
            return (pivot_row, 0);
        }
    }
    (pivot_row, if pivot_row == dim { index } else { 0 })
}

/// `x Q^-1 x`.
pub fn q_norm_sq(x: &LatticePoint, cov: &CovarianceData) -> f64 {
    debug_assert_eq!(x.dim(), cov.dim());
    if let Some(s) = cov.exact_scale {
        return (s as i128 * x.0.iter().map(|&c| c as i128 * c as i128).sum::<i128>()) as f64;
    }
    let d = cov.dim();
    let mut acc = crate::sum::NeumaierSum::new();
    for i in 0..d {
        for j in 0..d {
            acc.add(x.0[i] as f64 * cov.q_inv[(i, j)] * x.0[j] as f64);
        }
    }
    acc.value().max(0.0)
}

/// Whether a point with squared Q-norm `norm_sq` lies in `B(r)`.
#[inline]
pub fn within_radius(norm_sq: f64, r: f64) -> bool {
    let r2 = r * r;
    norm_sq <= r2 + BALL_SLACK * r2.max(1.0)
}

/// A Q-norm ball with its lattice points in lexicographic order.
#[derive(Clone, Debug)]
pub struct Ball {
    pub radius: f64,
    pub points: Vec<LatticePoint>,
}

impl Ball {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, x: &LatticePoint) -> bool {
        self.points.binary_search(x).is_ok()
    }
}

pub fn enumerate_ball(r: f64, cov: &CovarianceData) -> Result<Ball> {
    enumerate_ball_capped(r, cov, DEFAULT_BALL_CAP)
}

pub fn enumerate_ball_capped(r: f64, cov: &CovarianceData, cap: usize) -> Result<Ball> {
    assert!(r >= 0.0 && r.is_finite(), "radius must be a nonnegative real");
    let d = cov.dim();
    // |x_i| <= r sqrt(Q_ii) on the ellipsoid x Q^-1 x <= r^2.
    let half: Vec<i64> = (0..d)
        .map(|i| (r * cov.q[(i, i)].sqrt() * (1.0 + BALL_SLACK) + BALL_SLACK).floor() as i64)
        .collect();
    let box_count = half.iter().fold(1f64, |acc, h| acc * (2 * h + 1) as f64);
    let unit_ball = std::f64::consts::PI.powf(d as f64 / 2.0) / gamma_half(d + 2);
    if unit_ball * r.powi(d as i32) * cov.det.sqrt() > cap as f64 || box_count > 64.0 * cap as f64 {
        return Err(Error::RadiusTooLarge { radius: r, cap });
    }
    let mut points = Vec::new();
    let mut cur: Vec<i64> = half.iter().map(|h| -h).collect();
    loop {
        let x = LatticePoint(cur.clone());
        if within_radius(q_norm_sq(&x, cov), r) {
            if points.len() == cap {
                return Err(Error::RadiusTooLarge { radius: r, cap });
            }
            points.push(x);
        }
        // Odometer increment, last coordinate fastest: lexicographic order.
        let mut i = d;
        loop {
            if i == 0 {
                return Ok(Ball { radius: r, points });
            }
            i -= 1;
            if cur[i] < half[i] {
                cur[i] += 1;
                break;
            }
            cur[i] = -half[i];
        }
    }
}

/// Sorted distinct values of `x Q^-1 x` over `B(r_max)`, starting with 0.
pub fn realizable_norms_sq(r_max: f64, cov: &CovarianceData) -> Result<Vec<f64>> {
    let ball = enumerate_ball(r_max, cov)?;
    let mut v: Vec<f64> = ball.points.iter().map(|x| q_norm_sq(x, cov)).collect();
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= BALL_SLACK * b.max(1.0));
    Ok(v)
}

/// `Gamma(k/2)` for a positive integer `k`.
pub fn gamma_half(k: usize) -> f64 {
    assert!(k > 0);
    let (mut g, mut a) = if k % 2 == 0 { (1.0, 1.0) } else { (std::f64::consts::PI.sqrt(), 0.5) };
    while (2.0 * a) as usize != k {
        g *= a;
        a += 1.0;
    }
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentReport {
    /// `sum |x|^2 p(x)`
    pub second_moment: f64,
    /// `sum |x|^2 log(|x|+1) p(x)`
    pub log_weighted: f64,
    /// `sum |x|^(d-2) p(x)`
    pub power_weighted: f64,
}

pub fn moment_report(dist: &StepDistribution) -> MomentReport {
    let d = dist.dim() as i32;
    let mut m2 = crate::sum::NeumaierSum::new();
    let mut mlog = crate::sum::NeumaierSum::new();
    let mut mpow = crate::sum::NeumaierSum::new();
    for (x, p) in dist.support() {
        let n = x.euclid();
        m2.add(n * n * p);
        mlog.add(n * n * (n + 1.0).ln() * p);
        mpow.add(n.powi(d - 2) * p);
    }
    MomentReport {
        second_moment: m2.value(),
        log_weighted: mlog.value(),
        power_weighted: mpow.value(),
    }
}

/// Parses a distribution spec file:
///
/// ```text
/// dim=3
/// 1 0 0 : 1/6
/// -1 0 0 : 1/6
/// ...
/// ```
///
/// or `dim=<d>` followed by the single token `simple`. `#` starts a comment.
pub fn parse_distribution_spec(text: &str) -> Result<(usize, DistSpec)> {
    let mut dim: Option<usize> = None;
    let mut simple = false;
    let mut support = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(v) = line.strip_prefix("dim=") {
            let d = v
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("line {}: bad dimension {v:?}", lineno + 1)))?;
            dim = Some(d);
            continue;
        }
        if line == "simple" {
            simple = true;
            continue;
        }
        let (lhs, rhs) = line.split_once(':').ok_or_else(|| {
            Error::Parse(format!("line {}: expected `x1 ... xd : prob`", lineno + 1))
        })?;
        let x: LatticePoint = lhs.parse()?;
        support.push((x, parse_probability(rhs.trim())?));
    }
    let dim = dim.ok_or_else(|| Error::Parse("missing `dim=<d>` header".into()))?;
    match (simple, support.is_empty()) {
        (true, true) => Ok((dim, DistSpec::Simple)),
        (false, false) => Ok((dim, DistSpec::Support(support))),
        (true, false) => Err(Error::Parse("`simple` cannot be combined with support lines".into())),
        (false, true) => Err(Error::BadProbabilities("empty support".into())),
    }
}

fn parse_probability(s: &str) -> Result<f64> {
    let bad = || Error::Parse(format!("bad probability {s:?}"));
    match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            Ok(a / b)
        }
        None => s.parse().map_err(|_| bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::{HashSet, VecDeque};

    fn pt(c: &[i64]) -> LatticePoint {
        LatticePoint::new(c.to_vec())
    }

    /// Brute-force aperiodicity: breadth-first search over sums of support
    /// steps inside `[-b, b]^d`, succeeding when every unit vector is reached.
    fn bfs_reaches_unit_vectors(dim: usize, support: &[LatticePoint], b: i64) -> bool {
        let mut seen = HashSet::new();
        let mut queue = VecDeque::new();
        seen.insert(LatticePoint::origin(dim));
        queue.push_back(LatticePoint::origin(dim));
        while let Some(x) = queue.pop_front() {
            for s in support {
                let y = x.add(s);
                if y.norm_inf() <= b && seen.insert(y.clone()) {
                    queue.push_back(y);
                }
            }
        }
        (0..dim).all(|i| seen.contains(&LatticePoint::unit(dim, i)))
    }

    fn symmetric_support(dim: usize, half: &[(Vec<i64>, f64)]) -> Vec<(LatticePoint, f64)> {
        let mut v = Vec::new();
        for (c, p) in half {
            let x = pt(c);
            v.push((x.neg(), *p));
            v.push((x, *p));
        }
        assert!(v.iter().all(|(x, _)| x.dim() == dim));
        v
    }

    #[test]
    fn simple_walk_d3() {
        let d = StepDistribution::simple(3).unwrap();
        assert_eq!(d.support().len(), 6);
        assert!(d.support().iter().all(|(_, p)| *p == 1.0 / 6.0));
        let q = d.covariance().q();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 / 3.0 } else { 0.0 };
                assert!((q[(i, j)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn simple_walk_d4() {
        let d = StepDistribution::simple(4).unwrap();
        assert_eq!(d.support().len(), 8);
        assert!((d.covariance().q()[(2, 2)] - 0.25).abs() < 1e-15);
        assert!((d.covariance().det() - 0.25f64.powi(4)).abs() < 1e-15);
    }

    #[test]
    fn axis_only_law_is_not_aperiodic() {
        let s = symmetric_support(3, &[(vec![1, 0, 0], 0.5)]);
        assert!(matches!(StepDistribution::custom(3, s), Err(Error::NotAperiodic { rank: 1, .. })));
    }

    #[test]
    fn doubled_steps_are_not_aperiodic() {
        let s = symmetric_support(
            3,
            &[(vec![2, 0, 0], 0.5 / 3.0), (vec![0, 2, 0], 0.5 / 3.0), (vec![0, 0, 2], 0.5 / 3.0)],
        );
        match StepDistribution::custom(3, s) {
            Err(Error::NotAperiodic { rank: 3, index: 8 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_asymmetric_bad_and_small() {
        let s = vec![
            (pt(&[1, 0, 0]), 0.2),
            (pt(&[-1, 0, 0]), 0.1),
            (pt(&[0, 1, 0]), 0.15),
            (pt(&[0, -1, 0]), 0.15),
            (pt(&[0, 0, 1]), 0.2),
            (pt(&[0, 0, -1]), 0.2),
        ];
        assert!(matches!(StepDistribution::custom(3, s), Err(Error::AsymmetricLaw { .. })));
        let s = symmetric_support(3, &[(vec![1, 0, 0], 0.25), (vec![0, 1, 0], 0.3)]);
        assert!(matches!(StepDistribution::custom(3, s), Err(Error::BadProbabilities(_))));
        let s = vec![(pt(&[1, 0, 0]), -0.5), (pt(&[-1, 0, 0]), 1.5)];
        assert!(matches!(StepDistribution::custom(3, s), Err(Error::BadProbabilities(_))));
        assert!(matches!(StepDistribution::simple(2), Err(Error::DimensionTooSmall { dim: 2 })));
    }

    #[test]
    fn custom_law_covariance_and_symmetry() {
        // Diagonal steps plus axis steps: aperiodic, hyperoctahedral.
        let mut half = vec![];
        for i in 0..3 {
            let mut c = vec![0; 3];
            c[i] = 1;
            half.push((c, 0.1));
        }
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            for sb in [1, -1] {
                let mut c = vec![0; 3];
                c[a] = 1;
                c[b] = sb;
                half.push((c, 0.2 / 6.0 * 3.0 / 3.0));
            }
        }
        let total: f64 = half.iter().map(|(_, p)| 2.0 * p).sum();
        let half: Vec<_> = half.into_iter().map(|(c, p)| (c, p / total)).collect();
        let d = StepDistribution::custom(3, symmetric_support(3, &half)).unwrap();
        assert_eq!(d.symmetry(), Symmetry { sign_flips: true, permutations: true });
        let mut q = DMatrix::<f64>::zeros(3, 3);
        for (x, p) in d.support() {
            for i in 0..3 {
                for j in 0..3 {
                    q[(i, j)] += p * (x.coords()[i] * x.coords()[j]) as f64;
                }
            }
        }
        assert_eq!(&q, d.covariance().q());
        let prod = d.covariance().q() * d.covariance().q_inv();
        assert!((prod - DMatrix::identity(3, 3)).abs().max() < 1e-10);
    }

    #[test]
    fn lazy_anisotropic_law_has_no_permutation_symmetry() {
        let s = vec![
            (pt(&[0, 0, 0]), 0.2),
            (pt(&[1, 0, 0]), 0.2),
            (pt(&[-1, 0, 0]), 0.2),
            (pt(&[0, 1, 0]), 0.1),
            (pt(&[0, -1, 0]), 0.1),
            (pt(&[0, 0, 1]), 0.1),
            (pt(&[0, 0, -1]), 0.1),
        ];
        let d = StepDistribution::custom(3, s).unwrap();
        assert_eq!(d.symmetry(), Symmetry { sign_flips: true, permutations: false });
        assert!(!d.covariance().is_exact());
        assert!((q_norm_sq(&pt(&[1, 0, 0]), d.covariance()) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn hermite_check_agrees_with_bfs() {
        let cases: Vec<Vec<(Vec<i64>, f64)>> = vec![
            vec![(vec![1, 0, 0], 0.5)],
            vec![(vec![1, 0, 0], 1.0 / 6.0), (vec![0, 1, 0], 1.0 / 6.0), (vec![0, 0, 1], 1.0 / 6.0)],
            vec![(vec![2, 0, 0], 1.0 / 6.0), (vec![0, 1, 0], 1.0 / 6.0), (vec![0, 0, 1], 1.0 / 6.0)],
            vec![(vec![1, 1, 0], 1.0 / 6.0), (vec![0, 1, 1], 1.0 / 6.0), (vec![1, 0, 1], 1.0 / 6.0)],
            vec![
                (vec![1, 1, 0], 0.125),
                (vec![0, 1, 1], 0.125),
                (vec![1, 0, 1], 0.125),
                (vec![1, 0, 0], 0.125),
            ],
            vec![(vec![2, 1, 0], 1.0 / 6.0), (vec![0, 3, 1], 1.0 / 6.0), (vec![1, 0, 1], 1.0 / 6.0)],
            vec![(vec![2, 0, 0], 0.25), (vec![0, 2, 0], 0.125), (vec![1, 1, 1], 0.125)],
        ];
        for half in cases {
            let support = symmetric_support(3, &half);
            let pts: Vec<LatticePoint> = support.iter().map(|(x, _)| x.clone()).collect();
            let (rank, index) = generated_lattice(3, &pts);
            let hnf = rank == 3 && index == 1;
            assert_eq!(hnf, bfs_reaches_unit_vectors(3, &pts, 8), "support {half:?}");
            let built = StepDistribution::custom(3, support).is_ok();
            assert_eq!(built, hnf);
        }
    }

    #[test]
    fn q_norm_examples() {
        let d = StepDistribution::simple(3).unwrap();
        let cov = d.covariance();
        assert_eq!(q_norm_sq(&pt(&[0, 0, 0]), cov), 0.0);
        assert_eq!(q_norm_sq(&pt(&[1, 0, 0]), cov), 3.0);
        assert_eq!(q_norm_sq(&pt(&[1, 1, 0]), cov), 6.0);
    }

    /// Exhaustive box scan, independent of the bounding-box logic.
    fn brute_ball(r: f64, cov: &CovarianceData, half: i64) -> Vec<LatticePoint> {
        let mut v = Vec::new();
        for a in -half..=half {
            for b in -half..=half {
                for c in -half..=half {
                    let x = pt(&[a, b, c]);
                    if q_norm_sq(&x, cov) <= r * r + 1e-9 {
                        v.push(x);
                    }
                }
            }
        }
        v
    }

    #[test]
    fn ball_examples() {
        let d = StepDistribution::simple(3).unwrap();
        let cov = d.covariance();
        let b0 = enumerate_ball(0.0, cov).unwrap();
        assert_eq!(b0.points, vec![LatticePoint::origin(3)]);
        assert_eq!(brute_ball(2.0, cov, 4).len(), 7);
        assert_eq!(enumerate_ball(2.0, cov).unwrap().points, brute_ball(2.0, cov, 4));
        assert_eq!(brute_ball(3f64.sqrt(), cov, 4).len(), 7);
        assert_eq!(enumerate_ball(3f64.sqrt(), cov).unwrap().len(), 7);
        assert_eq!(enumerate_ball(4.0, cov).unwrap().points, brute_ball(4.0, cov, 5));
        assert!(matches!(enumerate_ball_capped(50.0, cov, 1000), Err(Error::RadiusTooLarge { .. })));
    }

    #[test]
    fn realizable_norms_simple() {
        let d = StepDistribution::simple(3).unwrap();
        let v = realizable_norms_sq(3.0, d.covariance()).unwrap();
        assert_eq!(v, vec![0.0, 3.0, 6.0, 9.0]);
    }

    #[test]
    fn moments() {
        let m = moment_report(&StepDistribution::simple(3).unwrap());
        assert!((m.second_moment - 1.0).abs() < 1e-15);
        assert!((m.log_weighted - 2f64.ln()).abs() < 1e-15);
        let m5 = moment_report(&StepDistribution::simple(5).unwrap());
        assert!((m5.power_weighted - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spec_file_parsing() {
        let (d, s) = parse_distribution_spec("dim=3\nsimple\n").unwrap();
        assert_eq!((d, s), (3, DistSpec::Simple));
        let text = "# lazy walk\ndim=3\n0 0 0 : 1/4\n1 0 0 : 1/8\n-1 0 0 : 1/8\n\
                    0 1 0 : 1/8\n0 -1 0 : 1/8\n0 0 1 : 0.125\n0 0 -1 : 0.125\n";
        let (d, s) = parse_distribution_spec(text).unwrap();
        let dist = build_distribution(d, &s).unwrap();
        assert_eq!(dist.support().len(), 7);
        let (d2, s2) = parse_distribution_spec(&dist.to_spec_text()).unwrap();
        let again = build_distribution(d2, &s2).unwrap();
        assert_eq!(again.content_hash(), dist.content_hash());
        assert!(parse_distribution_spec("1 0 0 : 0.5").is_err());
        assert!(parse_distribution_spec("dim=3\n1 0 : x").is_err());
    }

    #[test]
    fn orbit_sizes() {
        let s = Symmetry { sign_flips: true, permutations: true };
        assert_eq!(s.orbit_size(&pt(&[0, 0, 0])), 1);
        assert_eq!(s.orbit_size(&pt(&[1, 0, 0])), 6);
        assert_eq!(s.orbit_size(&pt(&[1, 1, 0])), 12);
        assert_eq!(s.orbit_size(&pt(&[1, 2, 3])), 48);
        assert_eq!(s.canonical(&pt(&[0, -3, 1])), pt(&[0, 1, 3]));
    }

    #[test]
    fn gamma_half_values() {
        assert!((gamma_half(1) - std::f64::consts::PI.sqrt()).abs() < 1e-15);
        assert_eq!(gamma_half(2), 1.0);
        assert!((gamma_half(5) - 0.75 * std::f64::consts::PI.sqrt()).abs() < 1e-15);
        assert_eq!(gamma_half(8), 6.0);
    }

    proptest! {
        #[test]
        fn norm_is_even(a in -50i64..50, b in -50i64..50, c in -50i64..50) {
            let d = StepDistribution::simple(3).unwrap();
            let x = pt(&[a, b, c]);
            prop_assert_eq!(q_norm_sq(&x, d.covariance()), q_norm_sq(&x.neg(), d.covariance()));
        }

        #[test]
        fn balls_nest_and_are_symmetric(r1 in 0.0f64..6.0, dr in 0.0f64..3.0) {
            let d = StepDistribution::simple(3).unwrap();
            let small = enumerate_ball(r1, d.covariance()).unwrap();
            let big = enumerate_ball(r1 + dr, d.covariance()).unwrap();
            prop_assert!(small.points.contains(&LatticePoint::origin(3)));
            for x in &small.points {
                prop_assert!(big.contains(x));
                prop_assert!(small.contains(&x.neg()));
            }
        }
    }
}

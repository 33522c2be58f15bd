//! Heavy points as measurable statistics: threshold sets at time `n` and at
//! the horizon, local-time profiles around a centre, coverage radii, sums over
//! fixed sets, and the scan for heavy sites with a never-visited companion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::green::DerivedConstants;
use crate::lattice::{q_norm_sq, CovarianceData, LatticePoint, StepDistribution};
use crate::walk::{LocalTimeField, WalkRun};

/// Norm values closer than this (relative) are the same radius.
const RADIUS_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeavyConfig {
    pub n: u64,
    /// Threshold slack `delta_n >= 0`.
    pub delta: f64,
    /// Ball radius `r_n` in the Q-norm.
    pub radius: f64,
    /// Profile tolerance.
    pub eps: f64,
}

/// An asymptotic hypothesis evaluated at one `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Advisory {
    pub name: String,
    pub value: f64,
    pub small: bool,
    pub note: String,
}

impl HeavyConfig {
    pub fn log_n(&self) -> f64 {
        (self.n as f64).ln()
    }

    /// `floor((1 - delta) lambda log n)`.
    pub fn k_n(&self, lambda: f64) -> u64 {
        ((1.0 - self.delta) * lambda * self.log_n()).floor().max(0.0) as u64
    }

    /// `r^(2d-4) log log n / log n`.
    pub fn beta_n(&self, dim: usize) -> f64 {
        let l = self.log_n();
        self.radius.powi(2 * dim as i32 - 4) * l.ln() / l
    }

    /// The smallness conditions behind the limit theorems, evaluated at this
    /// `n`. They concern limits, so a single `n` can only be suggestive.
    pub fn advisories(&self, dim: usize) -> Vec<Advisory> {
        let cutoff = 0.1;
        let beta = self.beta_n(dim);
        let dr = self.delta * self.radius.powi(2 * dim as i32 - 4);
        vec![
            Advisory {
                name: "beta_n".into(),
                value: beta,
                small: beta < cutoff,
                note: if beta < cutoff {
                    "beta_n is small at this n".into()
                } else {
                    format!("beta_n = {beta:.4} is not small at n = {}; the profile limit is not expected to be visible", self.n)
                },
            },
            Advisory {
                name: "delta_n r_n^(2d-4)".into(),
                value: dr,
                small: dr < cutoff,
                note: if dr < cutoff {
                    "threshold slack is small against the ball volume".into()
                } else {
                    format!("delta_n r_n^(2d-4) = {dr:.4} is not small")
                },
            },
            Advisory {
                name: "r_[cn] / r_n".into(),
                value: 1.0,
                small: true,
                note: "constant radius: the ratio is 1 for every c".into(),
            },
        ]
    }
}

fn need_threshold(k: u64) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("heavy threshold k_n must be >= 1".into()));
    }
    Ok(())
}

/// `A_n`: sites with `xi(z, n) >= k`, lexicographic.
pub fn heavy_sites(field: &LocalTimeField, k: u64) -> Result<Vec<(LatticePoint, u64)>> {
    need_threshold(k)?;
    Ok(field.sites_at_least(k))
}

/// `B_n`: indices `1 <= j <= n` with `xi(S_j, H) >= k`.
pub fn heavy_indices(run: &WalkRun, k: u64) -> Result<Vec<u64>> {
    need_threshold(k)?;
    let fh = run.field_h();
    let mut out = Vec::new();
    run.replay_packed(run.n, |j, p| {
        if j >= 1 && fh.get_packed(p) >= k {
            out.push(j);
        }
    })?;
    Ok(out)
}

/// Distinct sites `S_j` for the given indices, lexicographic.
pub fn index_sites(run: &WalkRun, indices: &[u64]) -> Result<Vec<LatticePoint>> {
    let Some(&last) = indices.iter().max() else {
        return Ok(Vec::new());
    };
    let path = run.positions(last)?;
    let mut sites: Vec<LatticePoint> = indices.iter().map(|&j| path[j as usize].clone()).collect();
    sites.sort();
    sites.dedup();
    Ok(sites)
}

/// What the counts around a centre are divided by.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Normalization {
    /// `m_x lambda log n`.
    LambdaLogN { lambda: f64, n: u64 },
    /// `m_x xi(z)`.
    CenterCount,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileRow {
    pub offset: LatticePoint,
    pub count: u64,
    pub m_x: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Profile {
    pub center: LatticePoint,
    pub rows: Vec<ProfileRow>,
    pub sup_deviation: f64,
    pub mean_deviation: f64,
    pub mean_ratio: f64,
}

/// `xi(z + x) / (m_x * scale)` for every offset `x`.
pub fn profile(
    field: &LocalTimeField,
    center: &LatticePoint,
    offsets: &[LatticePoint],
    constants: &DerivedConstants,
    norm: Normalization,
) -> Result<Profile> {
    let scale = match norm {
        Normalization::LambdaLogN { lambda, n } => lambda * (n as f64).ln(),
        Normalization::CenterCount => field.get(center) as f64,
    };
    let mut rows = Vec::with_capacity(offsets.len());
    for x in offsets {
        let m_x = if x.is_origin() { 1.0 } else { constants.require(x)?.m_x };
        let count = field.get(&center.add(x));
        rows.push(ProfileRow { offset: x.clone(), count, m_x, ratio: count as f64 / (m_x * scale) });
    }
    let devs: Vec<f64> = rows.iter().map(|r| (r.ratio - 1.0).abs()).collect();
    let k = rows.len().max(1) as f64;
    Ok(Profile {
        center: center.clone(),
        sup_deviation: devs.iter().copied().fold(0.0, f64::max),
        mean_deviation: devs.iter().sum::<f64>() / k,
        mean_ratio: rows.iter().map(|r| r.ratio).sum::<f64>() / k,
        rows,
    })
}

/// Supremum of a statistic over a possibly empty heavy set; the empty set
/// contributes the neutral value 0.
pub fn sup_or_zero(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedSetSum {
    pub sum: u64,
    pub predicted: f64,
    pub ratio: f64,
}

/// `sum_{x in A} xi(z + x)` against `lambda log n sum_{x in A} m_x`.
pub fn fixed_set_sum(
    field: &LocalTimeField,
    center: &LatticePoint,
    set: &[LatticePoint],
    constants: &DerivedConstants,
    n: u64,
) -> Result<FixedSetSum> {
    let mut sum = 0u64;
    let mut m = 0.0;
    for x in set {
        m += if x.is_origin() { 1.0 } else { constants.require(x)?.m_x };
        sum += field.get(&center.add(x));
    }
    let predicted = constants.lambda * (n as f64).ln() * m;
    Ok(FixedSetSum { sum, predicted, ratio: sum as f64 / predicted })
}

/// Lattice offsets sorted by Q-norm, with the distinct norm values.
#[derive(Clone, Debug)]
pub struct CoverageGrid {
    points: Vec<(f64, LatticePoint)>,
    radii_sq: Vec<f64>,
}

fn same_radius(a: f64, b: f64) -> bool {
    (a - b).abs() <= RADIUS_TOL * a.abs().max(1.0)
}

impl CoverageGrid {
    /// All offsets with `||x||^2 <= r_max^2`.
    pub fn new(dist: &StepDistribution, r_max: f64) -> Result<Self> {
        let cov = dist.covariance();
        let ball = crate::lattice::enumerate_ball(r_max, cov)?;
        Ok(Self::from_points(ball.points, cov))
    }

    fn from_points(pts: Vec<LatticePoint>, cov: &CovarianceData) -> Self {
        let mut points: Vec<(f64, LatticePoint)> = pts.into_iter().map(|x| (q_norm_sq(&x, cov), x)).collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let mut radii_sq: Vec<f64> = Vec::new();
        for (v, _) in &points {
            if radii_sq.last().is_none_or(|&r| !same_radius(r, *v)) {
                radii_sq.push(*v);
            }
        }
        Self { points, radii_sq }
    }

    /// Distinct realizable values of `||x||^2`, ascending, starting at 0.
    pub fn radii_sq(&self) -> &[f64] {
        &self.radii_sq
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Largest realizable radius whose ball around the centre is fully visited.
    pub radius: f64,
    /// Only the centre is covered; the radius is reported as 0.
    pub below_min: bool,
    /// Every offset on the grid is covered, so the true radius may be larger.
    pub capped: bool,
}

impl Coverage {
    fn from_index(grid: &CoverageGrid, covered: Option<usize>) -> Self {
        let last = grid.radii_sq.len() - 1;
        match covered {
            None | Some(0) => Coverage { radius: 0.0, below_min: true, capped: false },
            Some(i) => Coverage { radius: grid.radii_sq[i].sqrt(), below_min: false, capped: i == last },
        }
    }

    /// Whether every Q-nearest neighbour is visited.
    pub fn reaches_min_radius(&self) -> bool {
        !self.below_min
    }
}

/// Coverage radius by scanning offsets in order of norm and stopping at the
/// first unvisited one.
pub fn coverage_radius(field: &LocalTimeField, center: &LatticePoint, grid: &CoverageGrid) -> Coverage {
    let mut level = 0usize;
    for (v, x) in &grid.points {
        while !same_radius(grid.radii_sq[level], *v) {
            level += 1;
        }
        if field.get(&center.add(x)) == 0 {
            return Coverage::from_index(grid, level.checked_sub(1));
        }
    }
    Coverage::from_index(grid, Some(grid.radii_sq.len() - 1))
}

/// Same quantity by checking each ball in full.
pub fn coverage_radius_brute(field: &LocalTimeField, center: &LatticePoint, grid: &CoverageGrid) -> Coverage {
    let mut best = None;
    for (i, &r) in grid.radii_sq.iter().enumerate() {
        let full = grid
            .points
            .iter()
            .filter(|(v, _)| *v <= r || same_radius(*v, r))
            .all(|(_, x)| field.get(&center.add(x)) > 0);
        if full {
            best = Some(i);
        } else {
            break;
        }
    }
    Coverage::from_index(grid, best)
}

/// `lambda (log m + ((d-4)/(d-2) - eps) log log m)`.
pub fn thm13_threshold(lambda: f64, dim: usize, eps: f64, m: u64) -> f64 {
    let l = (m as f64).ln();
    let d = dim as f64;
    lambda * (l + ((d - 4.0) / (d - 2.0) - eps) * l.ln())
}

/// `floor(c (log m)^(1/(2d-4))) e_1`.
pub fn thm13_offset(c: f64, dim: usize, m: u64) -> LatticePoint {
    let mag = (c * (m as f64).ln().powf(1.0 / (2.0 * dim as f64 - 4.0))).floor() as i64;
    LatticePoint::axis(dim, 0, mag)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thm13Hit {
    pub index: u64,
    pub site: LatticePoint,
    pub offset: LatticePoint,
    pub local_time: u64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Thm13Scan {
    pub c: f64,
    pub eps: f64,
    pub first_index: u64,
    pub last_index: u64,
    pub hits: Vec<Thm13Hit>,
}

/// First index scanned; `log log m` is negative below 3.
pub const THM13_FIRST_INDEX: u64 = 3;

/// Indices `3 <= m <= n` with `xi(S_m, H) >= threshold(m)` and
/// `xi(S_m + x_m, H) = 0`.
pub fn thm13_scan(run: &WalkRun, lambda: f64, c: f64, eps: f64) -> Result<Thm13Scan> {
    if !run.dist().is_simple() {
        return Err(Error::Config("the rare-event scan is defined for the simple walk only".into()));
    }
    if eps <= 0.0 || c <= 0.0 {
        return Err(Error::Config("thm13 needs c > 0 and eps > 0".into()));
    }
    let dim = run.dist().dim();
    let fh = run.field_h();
    let mut candidates = Vec::new();
    run.replay_packed(run.n, |j, p| {
        if j >= THM13_FIRST_INDEX {
            let lt = fh.get_packed(p);
            if lt as f64 >= thm13_threshold(lambda, dim, eps, j) {
                candidates.push((j, lt, p));
            }
        }
    })?;
    let mut hits = Vec::new();
    for (j, lt, p) in candidates {
        let offset = thm13_offset(c, dim, j);
        if offset.is_origin() {
            continue;
        }
        let site = run.decode(p);
        if fh.get(&site.add(&offset)) == 0 {
            hits.push(Thm13Hit { index: j, site, offset, local_time: lt, threshold: thm13_threshold(lambda, dim, eps, j) });
        }
    }
    Ok(Thm13Scan { c, eps, first_index: THM13_FIRST_INDEX, last_index: run.n, hits })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub index: u64,
    pub site_recount: u64,
    pub companion_recount: u64,
    pub threshold: f64,
    pub ok: bool,
}

/// Re-checks sampled hits by replaying the whole horizon and counting visits
/// to the hit sites directly, without the local-time field.
pub fn audit_thm13(run: &WalkRun, scan: &Thm13Scan, sample: usize) -> Result<Vec<AuditRow>> {
    if scan.hits.is_empty() || sample == 0 {
        return Ok(Vec::new());
    }
    let take = sample.min(scan.hits.len());
    let picks: Vec<&Thm13Hit> = (0..take).map(|i| &scan.hits[i * scan.hits.len() / take]).collect();
    let mut targets: Vec<LatticePoint> = Vec::new();
    for h in &picks {
        targets.push(h.site.clone());
        targets.push(h.site.add(&h.offset));
    }
    let packed: Vec<u128> = targets.iter().map(|t| run.encode(t)).collect::<Result<_>>()?;
    let mut counts = vec![0u64; targets.len()];
    let mut at_index = vec![None; picks.len()];
    run.replay_packed(run.horizon, |j, p| {
        for (i, h) in picks.iter().enumerate() {
            if h.index == j {
                at_index[i] = Some(p);
            }
        }
        if j >= 1 {
            for (t, c) in packed.iter().zip(counts.iter_mut()) {
                if p == *t {
                    *c += 1;
                }
            }
        }
    })?;
    Ok(picks
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let site_ok = at_index[i] == Some(packed[2 * i]);
            let (a, b) = (counts[2 * i], counts[2 * i + 1]);
            AuditRow {
                index: h.index,
                site_recount: a,
                companion_recount: b,
                threshold: h.threshold,
                ok: site_ok && a as f64 >= h.threshold && b == 0 && a == h.local_time,
            }
        })
        .collect())
}

//! Torus quadrature for the Green function,
//!
//! ```text
//! G(x) = (2 pi)^-d  \int_{[-pi,pi]^d} cos(theta . x) / (1 - phi(theta)) dtheta,
//! phi(theta) = sum_y p(y) cos(theta . y).
//! ```
//!
//! The only singular point is `theta = 0`, where `1 - phi ~ theta Q theta / 2`.
//! The domain is peeled into dyadic shells around the origin (ratio 2 when the
//! law is sign-flip symmetric and the domain folds onto `[0,pi]^d`, ratio 3
//! otherwise). Each shell is tiled by cubes on which the integrand is analytic
//! and tensor Gauss-Legendre converges geometrically. The innermost cube is
//! replaced by the leading singular term `2 / theta Q theta`, whose integral is
//! known in closed form by self-similarity once one shell of it is computed.
//!
//! Error estimate: the shell sum is evaluated at two node counts; their
//! difference bounds the coarse error and therefore the fine one. The
//! truncated core term gets an explicit bound.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{LatticePoint, StepDistribution};
use crate::sum::{tree_combine, NeumaierSum};

/// Smallest admissible `1 - phi(theta)` on the spectrum scan grid.
pub const SPECTRUM_GAP: f64 = 1e-9;

#[derive(Clone, Copy, Debug)]
pub struct QuadratureSettings {
    /// Gauss-Legendre nodes per axis at the fine level.
    pub order: usize,
    /// Nodes per axis at the coarse level, used only for the error estimate.
    pub coarse_order: usize,
    /// Upper bound on `order` when the tolerance forces refinement.
    pub max_order: usize,
    /// Budget on integrand evaluations for one call.
    pub max_evaluations: f64,
}

impl QuadratureSettings {
    pub fn for_dim(dim: usize) -> Self {
        match dim {
            3 => Self { order: 10, coarse_order: 7, max_order: 26, max_evaluations: 4e8 },
            4 => Self { order: 9, coarse_order: 6, max_order: 17, max_evaluations: 4e8 },
            _ => Self { order: 8, coarse_order: 6, max_order: 12, max_evaluations: 6e8 },
        }
    }
}

/// Value and absolute error estimate for one lattice point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadValue {
    pub value: f64,
    pub abs_error: f64,
}

/// `G(x)` to absolute tolerance `tol`.
pub fn green_quadrature(x: &LatticePoint, dist: &StepDistribution, tol: f64) -> Result<QuadValue> {
    Ok(green_quadrature_many(std::slice::from_ref(x), dist, tol)?[0])
}

/// `G(x)` for several points on one shared grid.
pub fn green_quadrature_many(
    xs: &[LatticePoint],
    dist: &StepDistribution,
    tol: f64,
) -> Result<Vec<QuadValue>> {
    assert!(tol > 0.0, "tolerance must be positive");
    for x in xs {
        if x.dim() != dist.dim() {
            return Err(Error::DimensionMismatch { expected: dist.dim(), got: x.dim() });
        }
    }
    spectrum_check(dist)?;
    let mut settings = QuadratureSettings::for_dim(dist.dim());
    let mut best = f64::INFINITY;
    loop {
        let plan = Plan::new(dist, xs, &settings, tol);
        if plan.evaluations() > settings.max_evaluations {
            return Err(Error::NoConvergence { tol, achieved: best });
        }
        let out = plan.run();
        let worst = out.iter().map(|v| v.abs_error).fold(0.0, f64::max);
        if worst <= tol {
            return Ok(out);
        }
        best = best.min(worst);
        if settings.order >= settings.max_order {
            return Err(Error::NoConvergence { tol, achieved: best });
        }
        settings.coarse_order = settings.order;
        settings.order = (settings.order + 4).min(settings.max_order);
    }
}

/// Rejects laws whose characteristic function reaches 1 away from the origin.
///
/// Only `phi = +1` is fatal; bipartite laws reach `phi = -1` and are fine.
pub fn spectrum_check(dist: &StepDistribution) -> Result<()> {
    let d = dist.dim();
    let mut m = 12usize;
    while m > 4 && (m as f64).powi(d as i32) > 3e6 {
        m -= 2;
    }
    let grid: Vec<f64> = (0..m)
        .map(|j| {
            let t = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
            if t > std::f64::consts::PI {
                t - 2.0 * std::f64::consts::PI
            } else {
                t
            }
        })
        .collect();
    let mut idx = vec![0usize; d];
    let mut theta = vec![0.0; d];
    loop {
        if idx.iter().any(|&i| i != 0) {
            for (t, &i) in theta.iter_mut().zip(&idx) {
                *t = grid[i];
            }
            let gap = gap_at(dist, &theta);
            if gap < SPECTRUM_GAP {
                return Err(Error::SpectrumDegenerate { theta: theta.clone(), gap });
            }
        }
        let mut a = 0;
        loop {
            if a == d {
                return Ok(());
            }
            idx[a] += 1;
            if idx[a] < m {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

fn gap_at(dist: &StepDistribution, theta: &[f64]) -> f64 {
    crate::sum::compensated_sum(dist.support().iter().map(|(y, p)| {
        let dot: f64 = y.coords().iter().zip(theta).map(|(&c, t)| c as f64 * t).sum();
        p * (1.0 - dot.cos())
    }))
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..(m + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 1 { z } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (z * pm - pm1) / (z * z - 1.0);
            let dz = pm / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if m == 1 {
            return (vec![0.0], vec![2.0]);
        }
        nodes[i] = -z;
        nodes[m - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    (nodes, weights)
}

/// One axis-aligned integration cell.
#[derive(Clone, Debug)]
struct Cell {
    lo: Vec<f64>,
    side: f64,
}

struct Plan<'a> {
    dist: &'a StepDistribution,
    folded: bool,
    dim: usize,
    /// Half support: one representative of each `{y, -y}` pair with weight `2 p(y)`.
    steps: Vec<(Vec<i64>, f64)>,
    xs: Vec<Vec<i64>>,
    cells: Vec<Cell>,
    /// Half-width of the innermost (core) region after all shells.
    core: f64,
    fine: (Vec<f64>, Vec<f64>),
    coarse: (Vec<f64>, Vec<f64>),
    core_err: f64,
}

impl<'a> Plan<'a> {
    fn new(dist: &'a StepDistribution, xs: &[LatticePoint], s: &QuadratureSettings, tol: f64) -> Self {
        let d = dist.dim();
        let folded = dist.symmetry().sign_flips;
        let mut steps = Vec::new();
        // The origin step (lazy walks) does not contribute to 1 - phi.
        for (y, p) in dist.support() {
            if !y.is_origin() && y > &y.neg() {
                steps.push((y.coords().to_vec(), 2.0 * p));
            }
        }
        let xs: Vec<Vec<i64>> = xs.iter().map(|x| x.coords().to_vec()).collect();
        let xmax = xs.iter().flat_map(|x| x.iter().map(|c| c.abs())).max().unwrap_or(0) as f64;

        // Core bound: |f - 2/(theta Q theta)| <= |x|^2/l_min + M4/(6 l_min^2) for small theta.
        let l_min = dist.covariance().q().symmetric_eigenvalues().min();
        let m4: f64 = dist.support().iter().map(|(y, p)| p * (y.euclid_sq() as f64).powi(2)).sum();
        let x2 = xs.iter().map(|x| x.iter().map(|c| (c * c) as f64).sum::<f64>()).fold(0.0, f64::max);
        let excess = 2.0 * (x2 / l_min + m4 / (6.0 * l_min * l_min) + 1.0);
        let ratio = if folded { 2.0 } else { 3.0 };
        let norm = normaliser(d, folded);
        let mut core = std::f64::consts::PI;
        let mut levels = 0;
        let core_err = |c: f64| {
            let vol = if folded { c.powi(d as i32) } else { (2.0 * c).powi(d as i32) };
            norm * vol * excess
        };
        while levels < 60 && (levels < 4 || core_err(core) > tol * 1e-3) {
            core /= ratio;
            levels += 1;
        }
        let core_err = core_err(core);

        let mut cells = Vec::new();
        let mut outer = std::f64::consts::PI;
        for _ in 0..levels {
            let inner = outer / ratio;
            shell_cells(d, folded, inner, xmax, &mut cells);
            outer = inner;
        }
        Self {
            dist,
            folded,
            dim: d,
            steps,
            xs,
            cells,
            core,
            fine: gauss_legendre(s.order),
            coarse: gauss_legendre(s.coarse_order),
            core_err,
        }
    }

    fn evaluations(&self) -> f64 {
        let per = (self.fine.0.len() as f64).powi(self.dim as i32)
            + (self.coarse.0.len() as f64).powi(self.dim as i32);
        per * self.cells.len() as f64
    }

    fn run(&self) -> Vec<QuadValue> {
        let nx = self.xs.len();
        let parts: Vec<(Vec<NeumaierSum>, Vec<NeumaierSum>)> = self
            .cells
            .par_iter()
            .map(|cell| (self.integrate_cell(cell, &self.fine), self.integrate_cell(cell, &self.coarse)))
            .collect();
        let norm = normaliser(self.dim, self.folded);
        let core_term = norm * self.core.powi(self.dim as i32 - 2) * self.singular_unit_integral();
        (0..nx)
            .map(|k| {
                let fine: Vec<NeumaierSum> = parts.iter().map(|p| p.0[k]).collect();
                let coarse: Vec<NeumaierSum> = parts.iter().map(|p| p.1[k]).collect();
                let f = tree_combine(&fine).value() * norm;
                let c = tree_combine(&coarse).value() * norm;
                let value = f + core_term;
                let abs_error = (f - c).abs() + self.core_err + 1e-14 * value.abs();
                QuadValue { value, abs_error }
            })
            .collect()
    }

    /// Tensor Gauss-Legendre over one cell, for every requested `x` at once.
    fn integrate_cell(&self, cell: &Cell, rule: &(Vec<f64>, Vec<f64>)) -> Vec<NeumaierSum> {
        let d = self.dim;
        let m = rule.0.len();
        let ns = self.steps.len();
        let nx = self.xs.len();
        // factors[a][j][k]: per-axis phase factor for step k (k < ns) or point x (k >= ns).
        let mut factors = vec![vec![vec![Complex64::new(0.0, 0.0); ns + nx]; m]; d];
        let mut weights = vec![vec![0.0; m]; d];
        for a in 0..d {
            for j in 0..m {
                let theta = cell.lo[a] + 0.5 * cell.side * (rule.0[j] + 1.0);
                weights[a][j] = 0.5 * cell.side * rule.1[j];
                for (k, (y, _)) in self.steps.iter().enumerate() {
                    factors[a][j][k] = Complex64::from_polar(1.0, theta * y[a] as f64);
                }
                for (k, x) in self.xs.iter().enumerate() {
                    let ph = theta * x[a] as f64;
                    factors[a][j][ns + k] = if self.folded {
                        Complex64::new(ph.cos(), 0.0)
                    } else {
                        Complex64::from_polar(1.0, ph)
                    };
                }
            }
        }
        let mut sums = vec![NeumaierSum::new(); nx];
        let mut prefix = vec![vec![Complex64::new(1.0, 0.0); ns + nx]; d + 1];
        let mut wprefix = vec![1.0; d + 1];
        let mut idx = vec![0usize; d];
        // Odometer over the tensor grid with prefix products per axis.
        let mut axis = 0;
        loop {
            if axis < d {
                let j = idx[axis];
                let (head, tail) = prefix.split_at_mut(axis + 1);
                for (dst, (src, f)) in tail[0].iter_mut().zip(head[axis].iter().zip(&factors[axis][j])) {
                    *dst = src * f;
                }
                wprefix[axis + 1] = wprefix[axis] * weights[axis][j];
                axis += 1;
                continue;
            }
            let full = &prefix[d];
            let mut gap = 0.0;
            for (k, (_, p)) in self.steps.iter().enumerate() {
                gap += p * (1.0 - full[k].re);
            }
            let w = wprefix[d] / gap;
            for k in 0..nx {
                sums[k].add(w * full[ns + k].re);
            }
            // Advance the odometer from the innermost axis.
            let mut a = d;
            loop {
                if a == 0 {
                    return sums;
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < m {
                    axis = a;
                    break;
                }
                idx[a] = 0;
            }
        }
    }

    /// `\int 2/(u Q u) du` over the unit cube `[0,1]^d` (folded) or `[-1,1]^d`.
    ///
    /// By scaling, the integral over the inner cube of any shell is
    /// `ratio^(2-d)` times the whole, so one shell determines it.
    fn singular_unit_integral(&self) -> f64 {
        let d = self.dim;
        let q = self.dist.covariance().q();
        let ratio = if self.folded { 2.0 } else { 3.0 };
        let inner = 1.0 / ratio;
        let mut cells = Vec::new();
        shell_cells(d, self.folded, inner, 0.0, &mut cells);
        // Sub-split each cell once more; the integrand is cheap.
        let mut split = Vec::new();
        for c in &cells {
            subdivide(c, 2, &mut split);
        }
        let (nodes, weights) = &self.fine;
        let parts: Vec<NeumaierSum> = split
            .par_iter()
            .map(|cell| {
                let mut acc = NeumaierSum::new();
                let m = nodes.len();
                let mut idx = vec![0usize; d];
                let mut u = vec![0.0; d];
                loop {
                    let mut w = 1.0;
                    for a in 0..d {
                        u[a] = cell.lo[a] + 0.5 * cell.side * (nodes[idx[a]] + 1.0);
                        w *= 0.5 * cell.side * weights[idx[a]];
                    }
                    let mut quad = 0.0;
                    for a in 0..d {
                        for b in 0..d {
                            quad += u[a] * q[(a, b)] * u[b];
                        }
                    }
                    acc.add(w * 2.0 / quad);
                    let mut a = 0;
                    loop {
                        if a == d {
                            return acc;
                        }
                        idx[a] += 1;
                        if idx[a] < m {
                            break;
                        }
                        idx[a] = 0;
                        a += 1;
                    }
                }
            })
            .collect();
        let shell = tree_combine(&parts).value();
        shell / (1.0 - ratio.powi(2 - d as i32))
    }
}

/// `(2 pi)^-d`, times `2^d` when the domain is folded onto the positive orthant.
fn normaliser(d: usize, folded: bool) -> f64 {
    if folded {
        std::f64::consts::PI.powi(-(d as i32))
    } else {
        (2.0 * std::f64::consts::PI).powi(-(d as i32))
    }
}

/// Cells tiling the shell between the inner cube of half-width (or side, when
/// folded) `inner` and the next cube out, split so that `cos(theta . x)` has
/// bounded phase variation per cell.
fn shell_cells(d: usize, folded: bool, inner: f64, xmax: f64, out: &mut Vec<Cell>) {
    let (side, choices): (f64, Vec<f64>) = if folded {
        (inner, vec![0.0, inner])
    } else {
        (2.0 * inner, vec![-3.0 * inner, -inner, inner])
    };
    let centre_choice = if folded { usize::MAX } else { 1 };
    let k = choices.len();
    let splits = ((side * xmax / 5.0).ceil() as usize).max(1);
    let mut idx = vec![0usize; d];
    loop {
        let is_inner = if folded { idx.iter().all(|&i| i == 0) } else { idx.iter().all(|&i| i == centre_choice) };
        if !is_inner {
            let cell = Cell { lo: idx.iter().map(|&i| choices[i]).collect(), side };
            subdivide(&cell, splits, out);
        }
        let mut a = 0;
        loop {
            if a == d {
                return;
            }
            idx[a] += 1;
            if idx[a] < k {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

fn subdivide(cell: &Cell, s: usize, out: &mut Vec<Cell>) {
    if s <= 1 {
        out.push(cell.clone());
        return;
    }
    let d = cell.lo.len();
    let side = cell.side / s as f64;
    let mut idx = vec![0usize; d];
    loop {
        out.push(Cell {
            lo: cell.lo.iter().zip(&idx).map(|(l, &i)| l + i as f64 * side).collect(),
            side,
        });
        let mut a = 0;
        loop {
            if a == d {
                return;
            }
            idx[a] += 1;
            if idx[a] < s {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for m in [1, 2, 5, 8, 13] {
            let (n, w) = gauss_legendre(m);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
            for deg in 0..(2 * m) {
                let got: f64 = n.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let want = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((got - want).abs() < 1e-13, "m={m} deg={deg}");
            }
        }
    }

    #[test]
    fn simple_walk_d3_origin() {
        let d = StepDistribution::simple(3).unwrap();
        let g0 = green_quadrature(&LatticePoint::origin(3), &d, 1e-8).unwrap();
        // Watson's integral for the cubic lattice: 1.516386059151978...
        assert!((g0.value - 1.516_386_059_151_978).abs() < 1e-8, "{g0:?}");
        assert!(g0.abs_error <= 1e-8);
    }

    #[test]
    fn neighbour_identity_and_symmetry() {
        let d = StepDistribution::simple(3).unwrap();
        let xs = [LatticePoint::origin(3), LatticePoint::unit(3, 0), LatticePoint::unit(3, 0).neg()];
        let v = green_quadrature_many(&xs, &d, 1e-6).unwrap();
        assert!((v[0].value - 1.0 - v[1].value).abs() < 1e-6);
        assert_eq!(v[1].value, v[2].value);
    }

    #[test]
    fn unfolded_law_matches_folded_rule() {
        // Force the full-torus (ratio 3) decomposition on a law that also folds.
        let s = StepDistribution::simple(3).unwrap();
        let xs = [LatticePoint::origin(3), LatticePoint::new(vec![1, 1, 0])];
        let folded = green_quadrature_many(&xs, &s, 1e-7).unwrap();
        let plan_settings = QuadratureSettings::for_dim(3);
        let mut plan = Plan::new(&s, &xs, &plan_settings, 1e-7);
        plan.folded = false;
        plan.cells.clear();
        let mut core = std::f64::consts::PI;
        let mut outer = std::f64::consts::PI;
        for _ in 0..16 {
            let inner = outer / 3.0;
            shell_cells(3, false, inner, 1.0, &mut plan.cells);
            outer = inner;
            core /= 3.0;
        }
        plan.core = core;
        let unfolded = plan.run();
        for (a, b) in folded.iter().zip(&unfolded) {
            assert!((a.value - b.value).abs() < 1e-6, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn degenerate_spectrum_rejected() {
        // Non-aperiodic laws never get this far; check the bipartite corner is accepted.
        let d = StepDistribution::simple(3).unwrap();
        assert!(spectrum_check(&d).is_ok());
        assert!(gap_at(&d, &[std::f64::consts::PI; 3]) > 1.9);
    }
}

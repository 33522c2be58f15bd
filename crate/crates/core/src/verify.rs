//! The self-check suite: every invariant of the library, measured against its
//! bound. `Quick` runs the exact engines; `Full` adds the Monte Carlo suites.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;

use crate::error::Result;
use crate::green::{
    asymptotic_constant, derive_constants, dp_oracle, green_asymptotic, l1_box, DerivedConstants, GreenTable,
};
use crate::heavylab::{
    coverage_radius, coverage_radius_brute, heavy_sites, profile, sup_or_zero, CoverageGrid, HeavyConfig,
    Normalization,
};
use crate::io::g6;
use crate::jointlaw::{
    joint_pmf_oracle, log_phi_constant, phi, psi, psi_upper_bound, restricted_mgf, ExcursionLaw, SiteLaw,
};
use crate::lattice::{
    build_distribution, enumerate_ball, parse_distribution_spec, q_norm_sq, LatticePoint, StepDistribution,
};
use crate::stats::Band;
use crate::walk::{excursion_batch, estimate_hitting, simulate_replica, SimOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Quick,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
    pub note: String,
}

impl Check {
    /// Passes when `measured <= bound`.
    pub fn at_most(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self { name: name.into(), measured, bound, pass: measured <= bound, note: String::new() }
    }

    /// Passes when `measured >= bound`.
    pub fn at_least(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self { name: name.into(), measured, bound, pass: measured >= bound, note: String::new() }
    }

    /// A yes/no property, reported as 1 (holds) against the required 1.
    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self { name: name.into(), measured: if ok { 1.0 } else { 0.0 }, bound: 1.0, pass: ok, note: String::new() }
    }

    fn failed(name: impl Into<String>, note: String) -> Self {
        Self { name: name.into(), measured: f64::NAN, bound: f64::NAN, pass: false, note }
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub level: Level,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.pass).count()
    }

    /// One line per check, then a summary. Contains no timings, so identical
    /// inputs give identical bytes.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = write!(
                s,
                "{} {} measured={} bound={}",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                g6(c.measured),
                g6(c.bound)
            );
            if !c.note.is_empty() {
                let _ = write!(s, " ({})", c.note);
            }
            s.push('\n');
        }
        let _ = writeln!(s, "{} checks, {} failed", self.checks.len(), self.failures());
        s
    }
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub level: Level,
    /// Green cache directory; values found there are checked, not recomputed.
    pub cache_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { level: Level::Quick, cache_dir: None, seed: 0 }
    }
}

/// Green tolerance used for every tabulated value in the suite.
pub const GREEN_TOL: f64 = 1e-9;
/// Box radius of the Green and Lemma 2.2 suites.
pub const BOX: i64 = 5;
/// DP horizon per dimension; the tail bound shrinks like `n^{1-d/2}`.
pub fn dp_horizon(dim: usize) -> usize {
    match dim {
        3 => 1000,
        4 => 200,
        _ => 100,
    }
}
/// Allowed gap between quadrature and the tail-extrapolated DP sum.
pub const EXTRAPOLATION_TOL: f64 = 1e-3;

pub fn run_verify(opts: &VerifyOptions) -> VerifyReport {
    let mut checks = Vec::new();
    run_suite(&mut checks, "lattice", lattice_suite);
    let mut by_dim: Vec<(usize, DerivedConstants)> = Vec::new();
    for d in [3usize, 4, 5] {
        run_suite(&mut checks, &format!("green/d{d}"), |c| {
            let k = green_suite(d, opts, c)?;
            by_dim.push((d, k));
            Ok(())
        });
    }
    if by_dim.len() == 3 {
        let g: Vec<f64> = by_dim.iter().map(|(_, k)| k.gamma).collect();
        checks.push(Check::holds("green/gamma_in_unit_interval", g.iter().all(|&x| x > 0.0 && x < 1.0)));
        checks.push(Check::holds("green/gamma_increasing_in_d", g[0] < g[1] && g[1] < g[2]).note(format!(
            "gamma = {}, {}, {}",
            g6(g[0]),
            g6(g[1]),
            g6(g[2])
        )));
    }
    run_suite(&mut checks, "green/asymptote", |c| asymptote_suite(opts, c));
    if let Some((_, k3)) = by_dim.first() {
        run_suite(&mut checks, "jointlaw", |c| jointlaw_suite(k3, c));
        run_suite(&mut checks, "walk", |c| walk_exact_suite(opts.seed, c));
        run_suite(&mut checks, "heavylab", |c| heavylab_suite(k3, opts.seed, c));
        if opts.level == Level::Full {
            run_suite(&mut checks, "walk/mc", |c| walk_mc_suite(k3, opts.seed, c));
        }
    }
    VerifyReport { level: opts.level, checks }
}

fn run_suite(checks: &mut Vec<Check>, name: &str, f: impl FnOnce(&mut Suite) -> Result<()>) {
    let mut s = Suite { prefix: name.to_string(), checks: Vec::new() };
    let r = f(&mut s);
    checks.append(&mut s.checks);
    if let Err(e) = r {
        checks.push(Check::failed(format!("{name}/completed"), e.to_string()));
    }
}

struct Suite {
    prefix: String,
    checks: Vec<Check>,
}

impl Suite {
    fn push(&mut self, mut c: Check) {
        c.name = format!("{}/{}", self.prefix, c.name);
        self.checks.push(c);
    }
}

fn max_of(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(f64::INFINITY, f64::min)
}

fn mixed_law() -> Result<StepDistribution> {
    let text = "dim=3\n\
        1 0 0 : 0.1\n-1 0 0 : 0.1\n0 1 0 : 0.1\n0 -1 0 : 0.1\n0 0 1 : 0.1\n0 0 -1 : 0.1\n\
        1 1 0 : 0.1\n-1 -1 0 : 0.1\n0 1 1 : 0.1\n0 -1 -1 : 0.1\n";
    let (d, spec) = parse_distribution_spec(text)?;
    build_distribution(d, &spec)
}

fn lattice_suite(s: &mut Suite) -> Result<()> {
    let laws = vec![
        ("simple3", StepDistribution::simple(3)?),
        ("simple4", StepDistribution::simple(4)?),
        ("simple5", StepDistribution::simple(5)?),
        ("mixed3", mixed_law()?),
    ];
    for (name, dist) in &laws {
        let mass: f64 = dist.support().iter().map(|(_, p)| p).sum();
        s.push(Check::at_most(format!("{name}/mass"), (mass - 1.0).abs(), 1e-12));
        let asym = max_of(dist.support().iter().map(|(x, p)| (p - dist.prob(&x.neg())).abs()));
        s.push(Check::at_most(format!("{name}/symmetric"), asym, 0.0));
        let d = dist.dim();
        let q = dist.covariance().q();
        let mut gap = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let v: f64 = dist
                    .support()
                    .iter()
                    .map(|(x, p)| x.coords()[i] as f64 * x.coords()[j] as f64 * p)
                    .sum();
                gap = gap.max((v - q[(i, j)]).abs());
            }
        }
        s.push(Check::at_most(format!("{name}/covariance_recomputed"), gap, 1e-15));
        let cov = dist.covariance();
        let radii = [0.0, 1.0, 1.5, 2.0, 2.5, 3.0];
        let balls: Vec<_> = radii.iter().map(|&r| enumerate_ball(r, cov)).collect::<Result<_>>()?;
        let nested = balls.windows(2).all(|w| w[0].points.iter().all(|x| w[1].contains(x)));
        s.push(Check::holds(format!("{name}/balls_nested"), nested));
        let symmetric = balls.iter().all(|b| b.points.iter().all(|x| b.contains(&x.neg())));
        s.push(Check::holds(format!("{name}/balls_symmetric"), symmetric));
        let qsym = max_of(balls.last().into_iter().flat_map(|b| &b.points).map(|x| {
            (q_norm_sq(x, cov) - q_norm_sq(&x.neg(), cov)).abs()
        }));
        s.push(Check::at_most(format!("{name}/q_norm_even"), qsym, 0.0));
    }
    let periodic = [
        "dim=3\n1 0 0 : 0.5\n-1 0 0 : 0.5\n",
        "dim=3\n2 0 0 : 0.1666666666666667\n-2 0 0 : 0.1666666666666667\n0 2 0 : 0.1666666666666667\n\
         0 -2 0 : 0.1666666666666667\n0 0 2 : 0.1666666666666666\n0 0 -2 : 0.1666666666666666\n",
    ];
    let rejected = periodic.iter().all(|t| {
        parse_distribution_spec(t).and_then(|(d, spec)| build_distribution(d, &spec)).is_err()
    });
    s.push(Check::holds("non_generating_laws_rejected", rejected));
    Ok(())
}

fn green_table(dist: &StepDistribution, sites: &[LatticePoint], opts: &VerifyOptions) -> Result<GreenTable> {
    match &opts.cache_dir {
        Some(dir) => GreenTable::load_or_compute(dir, dist, sites, GREEN_TOL),
        None => GreenTable::compute(dist, sites, GREEN_TOL),
    }
}

fn green_suite(d: usize, opts: &VerifyOptions, s: &mut Suite) -> Result<DerivedConstants> {
    let dist = StepDistribution::simple(d)?;
    let sites = l1_box(d, BOX);
    let gt = green_table(&dist, &sites, opts)?;
    let n_max = dp_horizon(d);
    let dp = dp_oracle(&sites, &dist, n_max, None)?;
    let mut ratio = 0.0f64;
    let mut extrap = 0.0f64;
    for (x, v) in sites.iter().zip(&dp.values) {
        let e = gt.get(x).ok_or_else(|| crate::error::Error::MissingGreenValue(x.to_string()))?;
        ratio = ratio.max((e.value - v.value).abs() / (e.abs_error + v.tail_bound));
        extrap = extrap.max((e.value - v.extrapolated()).abs());
    }
    s.push(Check::at_most("quadrature_vs_dp_within_bounds", ratio, 1.0).note("|quad - dp| / (abs_error + tail_bound)"));
    s.push(Check::at_most("quadrature_vs_dp_extrapolated", extrap, EXTRAPOLATION_TOL));
    let scale = 2.0 * (d as f64 / (2.0 * std::f64::consts::PI)).powf(d as f64 / 2.0);
    let jp = max_of(dp.max_term_scaled[10..].iter().copied());
    s.push(Check::at_most("local_bound_n_pow_half_d", jp, 1.5 * scale).note("sup over n in [10, n_max]"));

    let g0 = gt.value(&LatticePoint::origin(d))?;
    let values: Vec<f64> = sites.iter().map(|x| gt.value(x)).collect::<Result<_>>()?;
    let others = sites.iter().zip(&values).filter(|(x, _)| !x.is_origin());
    s.push(Check::holds(
        "table_positive_and_peaked",
        g0 >= 1.0 && others.clone().all(|(_, &v)| v > 0.0 && v < g0),
    ));
    let reflect = max_of(sites.iter().map(|x| (gt.value(x).unwrap_or(f64::NAN) - gt.value(&x.neg()).unwrap_or(0.0)).abs()));
    s.push(Check::at_most("table_even", reflect, 0.0));

    let k = derive_constants(&gt, &sites)?;
    s.push(Check::at_most("gamma_times_g0", (k.gamma * g0 - 1.0).abs(), 1e-12));
    s.push(Check::at_most("lambda_identity", (k.lambda + 1.0 / (1.0 - k.gamma).ln()).abs() / k.lambda, 1e-12));
    let mut id = 0.0f64;
    for (x, &gx) in sites.iter().zip(&values).filter(|(x, _)| !x.is_origin()) {
        let c = k.require(x)?;
        let h = gx / g0;
        let q = 1.0 - k.gamma / (1.0 - h * h);
        id = id
            .max((1.0 - c.gamma_x - h).abs())
            .max((c.q_x - q).abs())
            .max((c.s_x - (1.0 - c.gamma_x) * (1.0 - c.q_x)).abs())
            .max((c.m_x - (1.0 - c.gamma_x).powi(2) / (1.0 - k.gamma)).abs());
    }
    s.push(Check::at_most("identities_consistent", id, 1e-12));
    let origin_m = k.m(&LatticePoint::origin(d)).unwrap_or(f64::NAN);
    s.push(Check::at_most("m_origin_is_one", (origin_m - 1.0).abs(), 0.0));

    let g = k.gamma;
    let nz: Vec<_> = k.sites.iter().filter(|(x, _)| !x.is_origin()).map(|(_, c)| *c).collect();
    s.push(Check::at_least("escape_at_least_gamma", min_of(nz.iter().map(|c| c.gamma_x - g)), -1e-12));
    s.push(Check::at_least("q_lower", min_of(nz.iter().map(|c| c.q_x - (1.0 - g) / (2.0 - g))), -1e-12));
    s.push(Check::at_least("q_upper", min_of(nz.iter().map(|c| (1.0 - g) - c.q_x)), -1e-12));
    s.push(Check::at_least("escape_both_lower", min_of(nz.iter().map(|c| c.escape_both() - g / (2.0 - g))), -1e-12));
    s.push(Check::holds(
        "site_probabilities_valid",
        nz.iter().all(|c| c.q_x > 0.0 && c.q_x < 1.0 && c.s_x > 0.0 && c.s_x < 1.0 && c.q_x + c.s_x <= 1.0 && c.m_x > 0.0),
    ));
    let axis: Vec<f64> = (1..=BOX).map(|j| k.m(&LatticePoint::axis(d, 0, j)).unwrap_or(f64::NAN)).collect();
    s.push(Check::holds("m_decreasing_along_axis", axis.windows(2).all(|w| w[1] <= w[0])));
    Ok(k)
}

fn asymptote_suite(opts: &VerifyOptions, s: &mut Suite) -> Result<()> {
    let dist = StepDistribution::simple(3)?;
    let xs: Vec<LatticePoint> = (15..=25).map(|j| LatticePoint::axis(3, 0, j)).collect();
    let gt = green_table(&dist, &xs, opts)?;
    // Least squares of G(x) |x|_Q |Q|^{1/2} = a + b / |x|^2.
    let cov = dist.covariance();
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .map(|x| {
            let r2 = q_norm_sq(x, cov);
            Ok((1.0 / r2, gt.value(x)? * r2.sqrt() * cov.det().sqrt()))
        })
        .collect::<Result<_>>()?;
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let a = my - sxy / sxx * mx;
    let cd = asymptotic_constant(3);
    s.push(Check::at_most("c3_fit", (a / cd - 1.0).abs(), 0.01).note(format!("fitted {} vs {}", g6(a), g6(cd))));
    let x20 = LatticePoint::axis(3, 0, 20);
    let r = gt.value(&x20)? / green_asymptotic(&x20, &dist)?;
    s.push(Check::at_most("ratio_at_20e1", (r - 1.0).abs(), 0.05));
    Ok(())
}

fn jointlaw_suite(k: &DerivedConstants, s: &mut Suite) -> Result<()> {
    let sites = [LatticePoint::new(vec![1, 0, 0]), LatticePoint::new(vec![2, 0, 0]), LatticePoint::new(vec![1, 1, 0])];
    let mut mass = 0.0f64;
    let mut rows = 0.0f64;
    let mut dual = 0.0f64;
    let mut oracle = 0.0f64;
    let mut lemma = 0.0f64;
    let mut psi_ratio = 0.0f64;
    let mut ident = 0.0f64;
    let v_max = 0.1;
    let kg = log_phi_constant(k.gamma, v_max).ok_or(crate::error::Error::OutOfDomain {
        v: v_max,
        lo: -v_max,
        hi: v_max,
    })?;
    for x in &sites {
        let law = SiteLaw::from_constants(k, x)?;
        let jl = joint_pmf_oracle(&law, 15, 60);
        mass = mass.max((jl.total_mass() - 1.0).abs());
        for kk in 0..=15 {
            let want = law.gamma * (1.0 - law.gamma).powi(kk as i32);
            rows = rows.max((jl.row_mass(kk) - want).abs() / want);
            for v in [-0.2, -0.1, 0.05, 0.1] {
                let r = restricted_mgf(v, kk as u32, &law)?;
                oracle = oracle.max((jl.row_mgf(kk, v) - r.excursion_form).abs() / r.excursion_form);
            }
        }
        let hi = law.bare_upper();
        for i in 0..50 {
            let v = -1.0 + (0.95 * hi + 1.0) * i as f64 / 49.0;
            for kk in 0..=15u32 {
                dual = dual.max(restricted_mgf(v, kk, &law)?.relative_gap());
            }
        }
        for i in 0..50 {
            let v = -v_max + 2.0 * v_max * i as f64 / 49.0;
            let dev = (phi(v, &law)?.ln() - law.m_x * v).abs();
            let allowed = law.m_x * v * v * kg;
            lemma = lemma.max(if allowed > 0.0 { dev / allowed } else { 0.0 });
            psi_ratio = psi_ratio.max(psi(v, &law)? / psi_upper_bound(v, law.gamma));
        }
        let ex = ExcursionLaw::new(&law);
        ident = ident.max((ex.finite_total() - (1.0 - law.gamma)).abs()).max((ex.infinite_total() - law.gamma).abs());
    }
    s.push(Check::at_most("total_mass", mass, 1e-12));
    s.push(Check::at_most("row_marginals", rows, 1e-12).note("relative to gamma (1-gamma)^k"));
    s.push(Check::at_most("dual_forms_agree", dual, 1e-12));
    s.push(Check::at_most("oracle_vs_restricted_mgf", oracle, 1e-10));
    s.push(Check::at_most("log_phi_estimate", lemma, 1.0).note("|log phi - m v| / (m v^2 K)"));
    s.push(Check::at_most("psi_estimate", psi_ratio, 1.0));
    s.push(Check::at_most("excursion_identities", ident, 1e-12));
    Ok(())
}

fn walk_exact_suite(seed: u64, s: &mut Suite) -> Result<()> {
    let dist = StepDistribution::simple(3)?;
    let opts = SimOptions { horizon_factor: 2, ..Default::default() };
    let a = simulate_replica(&dist, 20_000, seed, 0, &opts)?;
    let b = simulate_replica(&dist, 20_000, seed, 1, &opts)?;
    let again = simulate_replica(&dist, 20_000, seed, 0, &opts)?;
    s.push(Check::holds("rerun_identical", a.field_h().digest() == again.field_h().digest()));
    let mut merged = a.field_h().clone();
    merged.merge(b.field_h())?;
    let expected = a.field_h().total() + b.field_h().total();
    s.push(Check::holds("merge_conserves_total", merged.total() == expected));
    let summed: u64 = merged.iter().map(|(_, c)| c).sum();
    s.push(Check::holds("merge_cells_sum_to_total", summed == expected));
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| crate::error::Error::Config(e.to_string()));
    let one = pool(1)?.install(|| crate::walk::excursion_batch(&dist, None, seed, 64, 2000))?;
    let four = pool(4)?.install(|| crate::walk::excursion_batch(&dist, None, seed, 64, 2000))?;
    s.push(Check::holds("worker_count_independent", one == four));
    Ok(())
}

fn heavylab_suite(k: &DerivedConstants, seed: u64, s: &mut Suite) -> Result<()> {
    let lambda = k.lambda;
    let kn: Vec<u64> = [1e3, 1e4, 1e5, 1e6, 1e7, 1e8]
        .iter()
        .map(|&n| HeavyConfig { n: n as u64, delta: 0.1, radius: 2.0, eps: 0.25 }.k_n(lambda))
        .collect();
    s.push(Check::holds("k_n_monotone", kn.windows(2).all(|w| w[0] <= w[1])));
    let beta = HeavyConfig { n: 1_000_000, delta: 0.0, radius: 2.0, eps: 0.25 }.beta_n(3);
    let l = (1e6f64).ln();
    s.push(Check::at_most("beta_n_arithmetic", (beta - 4.0 * l.ln() / l).abs(), 1e-12).note(format!("beta_n = {}", g6(beta))));

    let dist = StepDistribution::simple(3)?;
    let run = simulate_replica(&dist, 100_000, seed, 0, &SimOptions::default())?;
    let mut nested = true;
    let mut prev = heavy_sites(run.field_n(), 1)?;
    for kk in 2..=12 {
        let cur = heavy_sites(run.field_n(), kk)?;
        nested &= cur.iter().all(|x| prev.contains(x));
        prev = cur;
    }
    s.push(Check::holds("heavy_sets_nested", nested));
    let ball = enumerate_ball(2.0, dist.covariance())?.points;
    let (_, top) = run.field_n().max_local_time();
    let norm = Normalization::LambdaLogN { lambda, n: run.n };
    let pn = profile(run.field_n(), &top[0], &ball, k, norm)?;
    let ph = profile(run.field_h(), &top[0], &ball, k, norm)?;
    s.push(Check::holds("horizon_profile_dominates", pn.rows.iter().zip(&ph.rows).all(|(a, b)| b.count >= a.count)));
    let grid = CoverageGrid::new(&dist, 3.0)?;
    let agree = run
        .field_n()
        .top_sites(25)
        .iter()
        .all(|(z, _)| coverage_radius(run.field_h(), z, &grid) == coverage_radius_brute(run.field_h(), z, &grid));
    s.push(Check::holds("coverage_scan_matches_brute_force", agree));
    let empty = heavy_sites(run.field_n(), u64::MAX)?;
    s.push(Check::holds("empty_heavy_set_neutral", empty.is_empty() && sup_or_zero(Vec::new()) == 0.0));
    Ok(())
}

/// Geometric return law, per-excursion visit laws and hitting frequencies.
fn walk_mc_suite(k: &DerivedConstants, seed: u64, s: &mut Suite) -> Result<()> {
    let dist = StepDistribution::simple(3)?;
    let g = k.gamma;
    let recs = excursion_batch(&dist, None, seed, 10_000, 100_000)?;
    let kept: Vec<usize> = recs.iter().filter(|r| !r.late_return()).map(|r| r.completed()).collect();
    let mut worst = 0.0f64;
    for kk in 0..=8 {
        let hits = kept.iter().filter(|&&c| c == kk).count() as u64;
        let band = Band::binomial(hits, kept.len() as u64, g * (1.0 - g).powi(kk as i32), 4.0);
        worst = worst.max(band.deviation_sigmas());
    }
    s.push(Check::at_most("returns_geometric", worst, 4.0).note("worst bin in sigmas, k <= 8"));

    let e1 = LatticePoint::unit(3, 0);
    let c = k.require(&e1)?;
    let recs = excursion_batch(&dist, Some(&e1), seed ^ 0x5eed, 210_000, 20_000)?;
    let z: Vec<f64> = recs.iter().flat_map(|r| r.visits.iter().map(|&v| v as f64)).collect();
    let mean_band = Band::sample_mean(&z, c.m_x, 3.0);
    s.push(Check::at_most("visits_per_excursion_mean", mean_band.deviation_sigmas(), 3.0).note(format!(
        "{} excursions, mean {}",
        z.len(),
        g6(mean_band.observed)
    )));
    let zeros = z.iter().filter(|&&v| v == 0.0).count() as u64;
    let zb = Band::binomial(zeros, z.len() as u64, c.q_x / (1.0 - g), 3.0);
    s.push(Check::at_most("no_visit_given_return", zb.deviation_sigmas(), 3.0));
    let half = z.len() / 2;
    let (a, b) = (&z[..half], &z[half..]);
    let se = (crate::stats::std_error(a).powi(2) + crate::stats::std_error(b).powi(2)).sqrt();
    let gap = (crate::stats::mean(a) - crate::stats::mean(b)).abs() / se;
    s.push(Check::at_most("excursions_exchangeable", gap, 4.0));

    let h = estimate_hitting(&dist, &e1, 100_000, 10_000, seed ^ 0x417)?;
    let qb = Band::binomial(h.returned_first, h.replicas, c.q_x, 4.0);
    let sb = Band::binomial(h.hit_first, h.replicas, c.s_x, 4.0);
    s.push(Check::at_most("hitting_q", qb.deviation_sigmas(), 4.0));
    s.push(Check::at_most("hitting_s", sb.deviation_sigmas(), 4.0));
    Ok(())
}

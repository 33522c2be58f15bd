//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 1-6 and 10 gate the exit status, as do the audit clause of
//! criterion 9. The statistical clauses of criteria 7-9 are surrogates for
//! almost-sure limits; their lines are reported but do not gate.

use std::path::Path;
use std::process::{Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use lattice_heavy::experiment::{coverage_report, thm13_report, ExperimentConfig};
use lattice_heavy::green::{derive_constants, dp_oracle, l1_box, DerivedConstants, GreenTable};
use lattice_heavy::heavylab::{profile, CoverageGrid, HeavyConfig, Normalization};
use lattice_heavy::io::g6;
use lattice_heavy::jointlaw::{
    joint_pmf_oracle, log_phi_constant, phi, psi, psi_upper_bound, restricted_mgf, SiteLaw,
};
use lattice_heavy::lattice::{LatticePoint, StepDistribution};
use lattice_heavy::stats::{mean, sample_sd, Band};
use lattice_heavy::verify::{dp_horizon, GREEN_TOL};
use lattice_heavy::walk::{excursion_batch, simulate_replica, SimOptions};
use rayon::prelude::*;

type Res<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

struct Outcome {
    pass: bool,
    gating: bool,
    detail: String,
}

impl Outcome {
    fn hard(pass: bool, detail: String) -> Self {
        Self { pass, gating: true, detail }
    }

    fn soft(pass: bool, detail: String) -> Self {
        Self { pass, gating: false, detail }
    }
}

fn within(t: Instant, limit_s: u64) -> (bool, String) {
    let e = t.elapsed();
    (e < Duration::from_secs(limit_s), format!("{:.1} s (limit {limit_s} s)", e.as_secs_f64()))
}

fn simple(d: usize) -> Res<StepDistribution> {
    Ok(StepDistribution::simple(d)?)
}

fn table(cache: &Path, d: usize, sites: &[LatticePoint]) -> Res<GreenTable> {
    Ok(GreenTable::load_or_compute(cache, &simple(d)?, sites, GREEN_TOL)?)
}

fn constants3(cache: &Path) -> Res<DerivedConstants> {
    let sites = l1_box(3, 5);
    Ok(derive_constants(&table(cache, 3, &sites)?, &sites)?)
}

fn green_cross_validation(cache: &Path) -> Res<Outcome> {
    let t = Instant::now();
    let mut ratio = 0.0f64;
    let mut g0_gap = f64::NAN;
    for d in 3..=5 {
        let sites = l1_box(d, 3);
        let gt = table(cache, d, &sites)?;
        let dp = dp_oracle(&sites, &simple(d)?, dp_horizon(d), None)?;
        for (x, v) in sites.iter().zip(&dp.values) {
            let e = gt.get(x).ok_or("missing Green value")?;
            ratio = ratio.max((e.value - v.value).abs() / (e.abs_error + v.tail_bound));
            if d == 3 && x.is_origin() {
                g0_gap = (e.value - v.extrapolated()).abs();
            }
        }
    }
    let (fast, time) = within(t, 300);
    Ok(Outcome::hard(
        ratio <= 1.0 && g0_gap <= 1e-3 && fast,
        format!("max |quad-dp|/(err_quad+err_dp) = {} <= 1, |dG(0)| d=3 = {} <= 1e-3, {time}", g6(ratio), g6(g0_gap)),
    ))
}

fn identity_suite(cache: &Path) -> Res<Outcome> {
    for d in 3..=5 {
        table(cache, d, &l1_box(d, 5))?;
    }
    let t = Instant::now();
    let mut ident = 0.0f64;
    let mut lemma = f64::INFINITY;
    let mut sites_checked = 0;
    for d in 3..=5 {
        let sites = l1_box(d, 5);
        let gt = table(cache, d, &sites)?;
        let k = derive_constants(&gt, &sites)?;
        let g0 = gt.value(&LatticePoint::origin(d))?;
        let g = k.gamma;
        ident = ident
            .max((g * g0 - 1.0).abs())
            .max((k.lambda + 1.0 / (1.0 - g).ln()).abs() / k.lambda);
        for x in sites.iter().filter(|x| !x.is_origin()) {
            let c = k.require(x)?;
            let h = gt.value(x)? / g0;
            ident = ident
                .max((1.0 - c.gamma_x - h).abs())
                .max((c.q_x - (1.0 - g / (1.0 - h * h))).abs())
                .max((c.s_x - (1.0 - c.gamma_x) * (1.0 - c.q_x)).abs())
                .max((c.m_x - (1.0 - c.gamma_x).powi(2) / (1.0 - g)).abs());
            lemma = lemma
                .min(c.gamma_x - g)
                .min(c.q_x - (1.0 - g) / (2.0 - g))
                .min((1.0 - g) - c.q_x)
                .min(c.escape_both() - g / (2.0 - g));
            sites_checked += 1;
        }
    }
    let (fast, time) = within(t, 60);
    Ok(Outcome::hard(
        ident <= 1e-12 && lemma >= -1e-12 && fast,
        format!(
            "identity residual {} <= 1e-12, min inequality slack {} >= -1e-12 over {sites_checked} sites, {time}",
            g6(ident),
            g6(lemma)
        ),
    ))
}

fn joint_law_equivalence(k: &DerivedConstants) -> Res<Outcome> {
    let t = Instant::now();
    let mut oracle = 0.0f64;
    let mut mass = 0.0f64;
    let mut rows = 0.0f64;
    for x in [vec![1, 0, 0], vec![2, 0, 0], vec![1, 1, 0]] {
        let law = SiteLaw::from_constants(k, &LatticePoint::new(x))?;
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
    }
    let (fast, time) = within(t, 10);
    Ok(Outcome::hard(
        oracle <= 1e-10 && mass <= 1e-12 && rows <= 1e-12 && fast,
        format!(
            "oracle vs mgf {} <= 1e-10, |mass-1| {} <= 1e-12, row marginals {} <= 1e-12, {time}",
            g6(oracle),
            g6(mass),
            g6(rows)
        ),
    ))
}

fn excursion_bounds(k: &DerivedConstants) -> Res<Outcome> {
    let t = Instant::now();
    let mut lemma = 0.0f64;
    let mut psi_ratio = 0.0f64;
    let mut n = 0;
    for x in l1_box(3, 5).into_iter().filter(|x| !x.is_origin()) {
        let law = SiteLaw::from_constants(k, &x)?;
        let (lo, hi) = law.estimate_window();
        let v_max = 0.9 * hi;
        let kg = log_phi_constant(law.gamma, v_max).ok_or("no constant on the window")?;
        for i in 0..50 {
            let f = (i as f64 + 0.5) / 50.0;
            let v = -v_max + 2.0 * v_max * f;
            if v != 0.0 {
                lemma = lemma.max((phi(v, &law)?.ln() - law.m_x * v).abs() / (law.m_x * v * v * kg));
            }
            let w = lo + (hi - lo) * f;
            psi_ratio = psi_ratio.max(psi(w, &law)? / psi_upper_bound(w, law.gamma));
        }
        n += 1;
    }
    let (fast, time) = within(t, 10);
    Ok(Outcome::hard(
        lemma <= 1.0 && psi_ratio <= 1.0 && fast,
        format!(
            "|log phi - m v|/(m v^2 K) {} <= 1, psi/bound {} <= 1, 50 points x {n} sites, {time}",
            g6(lemma),
            g6(psi_ratio)
        ),
    ))
}

fn geometric_law(k: &DerivedConstants) -> Res<Outcome> {
    let t = Instant::now();
    let recs = excursion_batch(&simple(3)?, None, 0xacce5, 10_000, 100_000)?;
    let g = k.gamma;
    let mut worst = 0.0f64;
    for kk in 0..=8 {
        let hits = recs.iter().filter(|r| r.completed() == kk).count() as u64;
        worst = worst.max(Band::binomial(hits, recs.len() as u64, g * (1.0 - g).powi(kk as i32), 4.0).deviation_sigmas());
    }
    let (fast, time) = within(t, 300);
    Ok(Outcome::hard(
        worst <= 4.0 && fast,
        format!("worst bin k <= 8 at {} sigma <= 4, 1e4 walks to H = 1e5, {time}", g6(worst)),
    ))
}

fn excursion_mean(k: &DerivedConstants) -> Res<Outcome> {
    let t = Instant::now();
    let e1 = LatticePoint::unit(3, 0);
    let c = k.require(&e1)?;
    let recs = excursion_batch(&simple(3)?, Some(&e1), 0xe1, 210_000, 20_000)?;
    let z: Vec<f64> = recs.iter().flat_map(|r| r.visits.iter().map(|&v| v as f64)).collect();
    let mb = Band::sample_mean(&z, c.m_x, 3.0);
    let zeros = z.iter().filter(|&&v| v == 0.0).count() as u64;
    let zb = Band::binomial(zeros, z.len() as u64, c.q_x / (1.0 - k.gamma), 3.0);
    let (fast, time) = within(t, 300);
    Ok(Outcome::hard(
        z.len() >= 100_000 && mb.contains() && zb.contains() && fast,
        format!(
            "{} excursions, mean {} vs m = {} ({} sigma), P(Z=0|T<inf) {} vs {} ({} sigma), {time}",
            z.len(),
            g6(mb.observed),
            g6(c.m_x),
            g6(mb.deviation_sigmas()),
            g6(zb.observed),
            g6(zb.expected),
            g6(zb.deviation_sigmas())
        ),
    ))
}

/// Mean over the unit vectors of `xi(z+e,n) / (m_e xi(z,n))` at the heaviest site, per seed.
fn heaviest_site_ratios(k: &DerivedConstants, n: u64, seeds: u64) -> Res<Vec<f64>> {
    let dist = simple(3)?;
    let units: Vec<LatticePoint> = l1_box(3, 1).into_iter().filter(|x| !x.is_origin()).collect();
    let opts = SimOptions { horizon_factor: 1, ..Default::default() };
    (0..seeds)
        .into_par_iter()
        .map(|r| -> Res<f64> {
            let run = simulate_replica(&dist, n, 0x7e57, r, &opts)?;
            let (_, top) = run.field_n().max_local_time();
            let z = top.iter().min().ok_or("empty walk")?;
            Ok(profile(run.field_n(), z, &units, k, Normalization::CenterCount)?.mean_ratio)
        })
        .collect()
}

fn heavy_profile(k: &DerivedConstants) -> Res<Outcome> {
    let t = Instant::now();
    let small = heaviest_site_ratios(k, 100_000, 20)?;
    let large = heaviest_site_ratios(k, 10_000_000, 20)?;
    let inside = large.iter().filter(|&&s| (0.6..=1.4).contains(&s)).count();
    let (sd_small, sd_large) = (sample_sd(&small), sample_sd(&large));
    let (fast, time) = within(t, 1800);
    Ok(Outcome::soft(
        inside * 10 >= 9 * large.len() && sd_large <= sd_small && fast,
        format!(
            "{inside}/20 seeds in [0.6, 1.4] (mean {}), sd at n=1e7 {} vs n=1e5 {}, {time}",
            g6(mean(&large)),
            g6(sd_large),
            g6(sd_small)
        ),
    ))
}

/// Criteria 8 and 9 on shared walks with `n = 1e6`, `H = 1e7`.
fn coverage_and_rare_event(k: &DerivedConstants) -> Res<(Outcome, Outcome, Outcome)> {
    let t = Instant::now();
    let cfg = ExperimentConfig {
        steps: 1_000_000,
        horizon_factor: 10,
        seeds: 20,
        base_seed: 0xc0,
        delta: 0.0,
        thm13_c: 1.0,
        thm13_eps: 0.1,
        thm13_audit: 10,
        ..Default::default()
    };
    let dist = simple(3)?;
    let kn = HeavyConfig { n: cfg.steps, delta: cfg.delta, radius: cfg.radius, eps: cfg.eps }.k_n(k.lambda);
    let grid = CoverageGrid::new(&dist, cfg.coverage_radius_max)?;
    let opts = SimOptions { horizon_factor: cfg.horizon_factor, ..Default::default() };
    let per_seed: Vec<(bool, usize, usize, bool)> = (0..cfg.seeds)
        .into_par_iter()
        .map(|r| -> Res<_> {
            let run = simulate_replica(&dist, cfg.steps, cfg.base_seed, r, &opts)?;
            let cov = coverage_report(&cfg, &run, kn, &grid)?;
            let th = thm13_report(&cfg, &run, k.lambda)?;
            Ok((cov.neighbours_covered(), th.hits.len(), th.audit.len(), th.audit.iter().all(|a| a.ok)))
        })
        .collect::<Res<_>>()?;
    let covered = per_seed.iter().filter(|s| s.0).count();
    let nonempty = per_seed.iter().filter(|s| s.1 > 0).count();
    let audited: usize = per_seed.iter().map(|s| s.2).sum();
    let audit_ok = per_seed.iter().all(|s| s.3) && per_seed.iter().all(|s| s.2 == s.1.min(10));
    let (fast, time) = within(t, 1200);
    Ok((
        Outcome::soft(
            covered * 10 >= 8 * per_seed.len() && fast,
            format!("{covered}/20 seeds cover all 6 neighbours (k_n = {kn}, centers from B_n), {time}"),
        ),
        Outcome::hard(audit_ok, format!("{audited} sampled hits re-counted, all satisfy both conditions")),
        Outcome::soft(
            nonempty * 2 >= per_seed.len(),
            format!("{nonempty}/20 seeds with a nonempty hit list (c = 1, eps = 0.1, n = 1e6)"),
        ),
    ))
}

fn archive_files(dir: &Path) -> Res<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("seeds")] {
        for e in std::fs::read_dir(&sub)? {
            let p = e?.path();
            if p.is_file() {
                out.push((p.strip_prefix(dir)?.display().to_string(), std::fs::read(&p)?));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn engineering(cache: &Path) -> Res<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
    let t = Instant::now();
    let run = pool.install(|| {
        simulate_replica(&simple(3)?, 100_000_000, 10, 0, &SimOptions { horizon_factor: 1, ..Default::default() })
            .map_err(Box::<dyn std::error::Error + Send + Sync>::from)
    })?;
    let elapsed = t.elapsed().as_secs_f64();
    let sites = run.field_n().distinct_sites();
    drop(run);

    let tmp = tempfile::tempdir()?;
    let mut archives = Vec::new();
    for workers in ["1", "4"] {
        let dir = tmp.path().join(format!("w{workers}"));
        let status = Command::new(env!("CARGO_BIN_EXE_lattice-heavy"))
            .args(["--cache-dir", &cache.display().to_string(), "heavy-scan", "--steps", "20000", "--seeds", "6"])
            .args(["--seed", "99", "--delta", "0", "--archive", &dir.display().to_string()])
            .env("LATTICE_HEAVY_WORKERS", workers)
            .stderr(Stdio::null())
            .status()?;
        if !status.success() {
            return Err(format!("heavy-scan exited with {status}").into());
        }
        archives.push(archive_files(&dir)?);
    }
    let identical = archives[0] == archives[1] && !archives[0].is_empty();
    Ok(Outcome::hard(
        elapsed < 120.0 && identical,
        format!(
            "1e8 steps single-worker in {elapsed:.1} s (limit 120 s, {sites} sites), archives with 1 and 4 workers {}",
            if identical { "byte-identical" } else { "differ" }
        ),
    ))
}

fn report(id: &str, name: &str, o: Res<Outcome>, failed: &mut bool) {
    let o = o.unwrap_or_else(|e| Outcome::hard(false, format!("error: {e}")));
    let tag = if o.pass { "PASS" } else { "FAIL" };
    let note = if o.gating { "" } else { " [statistical surrogate, not gating]" };
    println!("criterion {id:>2} {tag}  {name}: {}{note}", o.detail);
    *failed |= o.gating && !o.pass;
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let cache = tempfile::tempdir().expect("temporary cache directory");
    let cache = cache.path();
    let mut failed = false;
    report("1", "Green cross-validation", green_cross_validation(cache), &mut failed);
    report("2", "identity suite", identity_suite(cache), &mut failed);
    let k = match constants3(cache) {
        Ok(k) => k,
        Err(e) => {
            println!("criteria 3-9 FAIL  constants unavailable: {e}");
            return ExitCode::FAILURE;
        }
    };
    report("3", "joint-law equivalence", joint_law_equivalence(&k), &mut failed);
    report("4", "excursion generating-function bounds", excursion_bounds(&k), &mut failed);
    report("5", "geometric return law", geometric_law(&k), &mut failed);
    report("6", "excursion mean", excursion_mean(&k), &mut failed);
    report("7", "heavy profile", heavy_profile(&k), &mut failed);
    match coverage_and_rare_event(&k) {
        Ok((cov, audit, nonempty)) => {
            report("8", "coverage", Ok(cov), &mut failed);
            report("9a", "rare-event scan audit", Ok(audit), &mut failed);
            report("9b", "rare-event scan frequency", Ok(nonempty), &mut failed);
        }
        Err(e) => report("8", "coverage and rare-event scan", Err(e), &mut failed),
    }
    report("10", "engineering", engineering(cache), &mut failed);
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

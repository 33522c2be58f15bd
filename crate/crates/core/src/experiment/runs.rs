use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::green::{derive_constants, l1_box, DerivedConstants, GreenTable};
use crate::heavylab::{
    audit_thm13, coverage_radius, heavy_indices, heavy_sites, index_sites, profile, sup_or_zero, thm13_scan,
    Advisory, AuditRow, CoverageGrid, HeavyConfig, Normalization, Thm13Hit,
};
use crate::io::{csv_string, g6};
use crate::jointlaw::{joint_pmf_oracle, SiteLaw};
use crate::lattice::{enumerate_ball, LatticePoint, StepDistribution};
use crate::stats::median;
use crate::walk::{simulate_replica, SimOptions, WalkRun};

/// Distribution plus the Green-derived constants a run needs.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub dist: StepDistribution,
    pub green: GreenTable,
    pub constants: DerivedConstants,
}

impl RunContext {
    /// Tabulates constants for the 1-box, the profile ball and `extra`,
    /// through the Green cache in `cache_dir` when given.
    pub fn prepare(cfg: &ExperimentConfig, cache_dir: Option<&Path>, extra: &[LatticePoint]) -> Result<Self> {
        let dist = cfg.distribution()?;
        let mut sites = l1_box(cfg.dim, 1);
        sites.extend(enumerate_ball(cfg.radius, dist.covariance())?.points);
        sites.extend(extra.iter().cloned());
        sites.sort();
        sites.dedup();
        let green = match cache_dir {
            Some(dir) => GreenTable::load_or_compute(dir, &dist, &sites, cfg.green_tol)?,
            None => GreenTable::compute(&dist, &sites, cfg.green_tol)?,
        };
        let constants = derive_constants(&green, &sites)?;
        Ok(Self { dist, green, constants })
    }
}

fn sim_options(cfg: &ExperimentConfig) -> SimOptions {
    SimOptions { horizon_factor: cfg.horizon_factor, ..Default::default() }
}

fn per_replica<T: Send>(cfg: &ExperimentConfig, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..cfg.seeds).into_par_iter().map(f).collect()
}

fn opt_g6(x: Option<f64>) -> String {
    x.map(g6).unwrap_or_default()
}

/// A per-replica report that aggregates into one CSV row.
pub trait SeedReport: Serialize + DeserializeOwned + Send {
    /// Archive stem: `seeds/<NAME>-<replica>.json` and `<NAME>.csv`.
    const NAME: &'static str;
    const HEADER: &'static [&'static str];
    fn replica(&self) -> u64;
    fn csv_row(&self) -> Vec<String>;
}

pub fn aggregate_csv<R: SeedReport>(reports: &[R]) -> Result<String> {
    let rows: Vec<Vec<String>> = reports.iter().map(|r| r.csv_row()).collect();
    csv_string(R::HEADER, &rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteCount {
    pub site: LatticePoint,
    pub count: u64,
}

fn site_counts(v: Vec<(LatticePoint, u64)>) -> Vec<SiteCount> {
    v.into_iter().map(|(site, count)| SiteCount { site, count }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub seed: u64,
    pub replica: u64,
    pub n: u64,
    pub horizon: u64,
    pub xi_n: u64,
    pub argmax: Vec<LatticePoint>,
    pub eta_n: u64,
    pub eta_note: String,
    pub top_sites: Vec<SiteCount>,
}

impl SeedReport for SimulateReport {
    const NAME: &'static str = "simulate";
    const HEADER: &'static [&'static str] = &["seed", "replica", "n", "H", "xi_n", "argmax_count", "eta_n"];
    fn replica(&self) -> u64 {
        self.replica
    }
    fn csv_row(&self) -> Vec<String> {
        vec![
            self.seed.to_string(),
            self.replica.to_string(),
            self.n.to_string(),
            self.horizon.to_string(),
            self.xi_n.to_string(),
            self.argmax.len().to_string(),
            self.eta_n.to_string(),
        ]
    }
}

const ETA_NOTE: &str = "eta_n uses local times truncated at the horizon H";

pub fn simulate_report(cfg: &ExperimentConfig, run: &WalkRun) -> Result<SimulateReport> {
    let (xi_n, argmax) = run.field_n().max_local_time();
    Ok(SimulateReport {
        seed: cfg.base_seed,
        replica: run.stream,
        n: run.n,
        horizon: run.horizon,
        xi_n,
        argmax,
        eta_n: run.eta(run.n)?,
        eta_note: ETA_NOTE.into(),
        top_sites: site_counts(run.field_n().top_sites(cfg.top_k)),
    })
}

pub fn run_simulate(cfg: &ExperimentConfig) -> Result<Vec<SimulateReport>> {
    let dist = cfg.distribution()?;
    let opts = sim_options(cfg);
    per_replica(cfg, |r| {
        let run = simulate_replica(&dist, cfg.steps, cfg.base_seed, r, &opts)?;
        simulate_report(cfg, &run)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub center: LatticePoint,
    pub count: u64,
    pub sup_deviation: f64,
    pub mean_deviation: f64,
    pub mean_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub center: LatticePoint,
    pub radius: f64,
    pub below_min: bool,
    pub capped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeavyReport {
    pub seed: u64,
    pub replica: u64,
    pub n: u64,
    pub horizon: u64,
    pub k_n: u64,
    pub beta_n: f64,
    pub a_n: Vec<SiteCount>,
    pub b_n_size: u64,
    pub b_n_centers: Vec<LatticePoint>,
    pub profiles: Vec<ProfileSummary>,
    /// Supremum over `A_n`; 0 when `A_n` is empty.
    pub sup_dev: f64,
    pub mean_dev: Option<f64>,
    pub coverage: Vec<CoverageRow>,
    pub r_median: Option<f64>,
    pub advisories: Vec<Advisory>,
}

impl SeedReport for HeavyReport {
    const NAME: &'static str = "heavy";
    const HEADER: &'static [&'static str] =
        &["seed", "replica", "k_n", "|A_n|", "|B_n|", "sup_dev", "mean_dev", "R_median"];
    fn replica(&self) -> u64 {
        self.replica
    }
    fn csv_row(&self) -> Vec<String> {
        vec![
            self.seed.to_string(),
            self.replica.to_string(),
            self.k_n.to_string(),
            self.a_n.len().to_string(),
            self.b_n_size.to_string(),
            g6(self.sup_dev),
            opt_g6(self.mean_dev),
            opt_g6(self.r_median),
        ]
    }
}

fn threshold(cfg: &ExperimentConfig, lambda: f64) -> Result<HeavyConfig> {
    let hc = HeavyConfig { n: cfg.steps, delta: cfg.delta, radius: cfg.radius, eps: cfg.eps };
    if hc.k_n(lambda) == 0 {
        return Err(Error::Config(format!("k_n = 0 at n = {}; increase steps or lower delta", cfg.steps)));
    }
    Ok(hc)
}

fn coverage_rows(run: &WalkRun, centers: &[LatticePoint], grid: &CoverageGrid) -> Vec<CoverageRow> {
    centers
        .iter()
        .map(|z| {
            let c = coverage_radius(run.field_h(), z, grid);
            CoverageRow { center: z.clone(), radius: c.radius, below_min: c.below_min, capped: c.capped }
        })
        .collect()
}

fn median_radius(rows: &[CoverageRow]) -> Option<f64> {
    (!rows.is_empty()).then(|| median(&rows.iter().map(|r| r.radius).collect::<Vec<_>>()))
}

pub fn run_heavy(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Vec<HeavyReport>> {
    let lambda = ctx.constants.lambda;
    let hc = threshold(cfg, lambda)?;
    let k = hc.k_n(lambda);
    let offsets = enumerate_ball(cfg.radius, ctx.dist.covariance())?.points;
    let grid = CoverageGrid::new(&ctx.dist, cfg.coverage_radius_max)?;
    let opts = sim_options(cfg);
    per_replica(cfg, |r| {
        let run = simulate_replica(&ctx.dist, cfg.steps, cfg.base_seed, r, &opts)?;
        let a_n = heavy_sites(run.field_n(), k)?;
        let b_n = heavy_indices(&run, k)?;
        let centers = index_sites(&run, &b_n)?;
        let mut profiles = Vec::with_capacity(a_n.len());
        for (z, count) in &a_n {
            let p = profile(run.field_n(), z, &offsets, &ctx.constants, Normalization::LambdaLogN { lambda, n: cfg.steps })?;
            profiles.push(ProfileSummary {
                center: z.clone(),
                count: *count,
                sup_deviation: p.sup_deviation,
                mean_deviation: p.mean_deviation,
                mean_ratio: p.mean_ratio,
            });
        }
        let coverage = coverage_rows(&run, &centers, &grid);
        Ok(HeavyReport {
            seed: cfg.base_seed,
            replica: r,
            n: cfg.steps,
            horizon: run.horizon,
            k_n: k,
            beta_n: hc.beta_n(cfg.dim),
            sup_dev: sup_or_zero(profiles.iter().map(|p| p.sup_deviation)),
            mean_dev: (!profiles.is_empty())
                .then(|| profiles.iter().map(|p| p.mean_deviation).sum::<f64>() / profiles.len() as f64),
            r_median: median_radius(&coverage),
            a_n: site_counts(a_n),
            b_n_size: b_n.len() as u64,
            b_n_centers: centers,
            profiles,
            coverage,
            advisories: hc.advisories(cfg.dim),
        })
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub seed: u64,
    pub replica: u64,
    pub n: u64,
    pub horizon: u64,
    pub k_n: u64,
    pub min_radius: f64,
    pub coverage: Vec<CoverageRow>,
    pub r_median: Option<f64>,
}

impl CoverageReport {
    /// Median radius reaches the smallest nonzero lattice radius; false when
    /// there are no centres.
    pub fn neighbours_covered(&self) -> bool {
        self.r_median.is_some_and(|r| r >= self.min_radius * (1.0 - 1e-12))
    }
}

impl SeedReport for CoverageReport {
    const NAME: &'static str = "coverage";
    const HEADER: &'static [&'static str] =
        &["seed", "replica", "k_n", "centers", "R_median", "covered_fraction", "neighbours_covered"];
    fn replica(&self) -> u64 {
        self.replica
    }
    fn csv_row(&self) -> Vec<String> {
        let covered = self.coverage.iter().filter(|c| !c.below_min).count();
        let frac = if self.coverage.is_empty() { None } else { Some(covered as f64 / self.coverage.len() as f64) };
        vec![
            self.seed.to_string(),
            self.replica.to_string(),
            self.k_n.to_string(),
            self.coverage.len().to_string(),
            opt_g6(self.r_median),
            opt_g6(frac),
            self.neighbours_covered().to_string(),
        ]
    }
}

pub fn coverage_report(cfg: &ExperimentConfig, run: &WalkRun, k: u64, grid: &CoverageGrid) -> Result<CoverageReport> {
    let centers = index_sites(run, &heavy_indices(run, k)?)?;
    let coverage = coverage_rows(run, &centers, grid);
    Ok(CoverageReport {
        seed: cfg.base_seed,
        replica: run.stream,
        n: run.n,
        horizon: run.horizon,
        k_n: k,
        min_radius: grid.radii_sq().get(1).map_or(0.0, |r| r.sqrt()),
        r_median: median_radius(&coverage),
        coverage,
    })
}

pub fn run_coverage(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Vec<CoverageReport>> {
    let k = threshold(cfg, ctx.constants.lambda)?.k_n(ctx.constants.lambda);
    let grid = CoverageGrid::new(&ctx.dist, cfg.coverage_radius_max)?;
    let opts = sim_options(cfg);
    per_replica(cfg, |r| {
        let run = simulate_replica(&ctx.dist, cfg.steps, cfg.base_seed, r, &opts)?;
        coverage_report(cfg, &run, k, &grid)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thm13Report {
    pub seed: u64,
    pub replica: u64,
    pub n: u64,
    pub horizon: u64,
    pub c: f64,
    pub eps: f64,
    pub first_index: u64,
    pub hits: Vec<Thm13Hit>,
    pub audit: Vec<AuditRow>,
}

impl SeedReport for Thm13Report {
    const NAME: &'static str = "thm13";
    const HEADER: &'static [&'static str] =
        &["seed", "replica", "n", "hits", "first_hit", "last_hit", "audited", "audit_ok"];
    fn replica(&self) -> u64 {
        self.replica
    }
    fn csv_row(&self) -> Vec<String> {
        let opt = |x: Option<u64>| x.map(|v| v.to_string()).unwrap_or_default();
        vec![
            self.seed.to_string(),
            self.replica.to_string(),
            self.n.to_string(),
            self.hits.len().to_string(),
            opt(self.hits.first().map(|h| h.index)),
            opt(self.hits.last().map(|h| h.index)),
            self.audit.len().to_string(),
            self.audit.iter().all(|a| a.ok).to_string(),
        ]
    }
}

pub fn thm13_report(cfg: &ExperimentConfig, run: &WalkRun, lambda: f64) -> Result<Thm13Report> {
    let scan = thm13_scan(run, lambda, cfg.thm13_c, cfg.thm13_eps)?;
    let audit = audit_thm13(run, &scan, cfg.thm13_audit)?;
    Ok(Thm13Report {
        seed: cfg.base_seed,
        replica: run.stream,
        n: run.n,
        horizon: run.horizon,
        c: cfg.thm13_c,
        eps: cfg.thm13_eps,
        first_index: scan.first_index,
        hits: scan.hits,
        audit,
    })
}

pub fn run_thm13(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Vec<Thm13Report>> {
    let opts = sim_options(cfg);
    per_replica(cfg, |r| {
        let run = simulate_replica(&ctx.dist, cfg.steps, cfg.base_seed, r, &opts)?;
        thm13_report(cfg, &run, ctx.constants.lambda)
    })
}

/// Joint pmf of `(xi(0,inf), xi(x,inf))` for the configured site, as CSV.
pub fn jointlaw_csv(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<String> {
    let x = cfg.site_point()?;
    let law = SiteLaw::from_constants(&ctx.constants, &x)?;
    Ok(joint_pmf_oracle(&law, cfg.kmax, cfg.jmax).to_csv())
}

//! Command-line front end. [`main_with`] parses arguments, runs one
//! subcommand and returns the process exit code.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{
    self, verify_archive, Archive, ExperimentConfig, RunContext, SeedReport,
};
use crate::green::{asymptotic_constant, derive_constants, dp_oracle, l1_box, GreenTable};
use crate::io::{csv_string, g6, to_json17};
use crate::lattice::LatticePoint;
use crate::stats::{mean, std_error};
use crate::verify::{run_verify, Level, VerifyOptions};
use crate::walk::{estimate_hitting, excursion_batch};

pub const WORKERS_ENV: &str = "LATTICE_HEAVY_WORKERS";
pub const DEFAULT_CACHE_DIR: &str = ".lattice-heavy-cache";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "lattice-heavy", version, about = "Heavy points of transient lattice random walks")]
struct Cli {
    /// Directory for cached Green tables.
    #[arg(long, global = true, default_value = DEFAULT_CACHE_DIR)]
    cache_dir: PathBuf,
    /// Compute Green values from scratch without reading or writing the cache.
    #[arg(long, global = true)]
    no_cache: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Green function and derived constants over an l1-box.
    Constants(ConstantsArgs),
    /// Green values by quadrature, optionally against the DP oracle.
    Green(GreenArgs),
    /// Simulate walks and report local-time statistics.
    Simulate(RunArgs),
    /// Heavy sets, local-time profiles and coverage per replica.
    HeavyScan(RunArgs),
    /// Coverage radii around heavy times.
    Coverage(RunArgs),
    /// Joint law of the local times at 0 and x.
    Jointlaw(RunArgs),
    /// Scan for heavy sites with an unvisited far neighbour.
    Thm13(RunArgs),
    /// Monte Carlo estimates of the constants against their exact values.
    Estimate(EstimateArgs),
    /// Run the invariant suite, or replay an archive.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// `simple` (or `srw`) or a distribution spec file.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    green_tol: Option<f64>,
}

#[derive(Args, Debug)]
struct ConstantsArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Radius of the l1-box of sites.
    #[arg(long = "box", default_value_t = 1)]
    box_radius: i64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct GreenArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sites such as "1,0,0"; repeatable. Defaults to the l1-box.
    #[arg(long = "x")]
    sites: Vec<String>,
    #[arg(long = "box", default_value_t = 1)]
    box_radius: i64,
    /// Also run the DP oracle up to this many steps.
    #[arg(long, value_parser = parse_count)]
    dp: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_count)]
    steps: Option<u64>,
    #[arg(long, value_parser = parse_count)]
    horizon_factor: Option<u64>,
    /// Base seed; replica r draws from stream r.
    #[arg(long, value_parser = parse_count)]
    seed: Option<u64>,
    /// Number of replicas.
    #[arg(long, visible_alias = "replicas", value_parser = parse_count)]
    seeds: Option<u64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    coverage_radius_max: Option<f64>,
    #[arg(long = "c")]
    thm13_c: Option<f64>,
    #[arg(long)]
    thm13_eps: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Site for the joint law, e.g. "1,0,0".
    #[arg(long = "x")]
    site: Option<String>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    jmax: Option<usize>,
    /// Primary output file (JSON for simulate, CSV otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a self-describing archive to this directory.
    #[arg(long)]
    archive: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "x", default_value = "1,0,0")]
    site: String,
    #[arg(long, value_parser = parse_count, default_value = "10000")]
    replicas: u64,
    #[arg(long, value_parser = parse_count, default_value = "10000")]
    horizon: u64,
    #[arg(long, value_parser = parse_count, default_value = "0")]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = VerifyLevel::Quick)]
    level: VerifyLevel,
    /// Replay this archive instead of running the suite.
    #[arg(long)]
    archive: Option<PathBuf>,
    #[arg(long, value_parser = parse_count, default_value = "0")]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VerifyLevel {
    Quick,
    Full,
}

/// Non-negative integers, also in exponent form such as `1e6`.
pub fn parse_count(s: &str) -> std::result::Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let x: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if !(x >= 0.0 && x.fract() == 0.0 && x < 9.223372036854776e18) {
        return Err(format!("{s:?} is not a non-negative integer"));
    }
    Ok(x as u64)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Parse(_)
        | Error::DimensionTooSmall { .. }
        | Error::DimensionMismatch { .. }
        | Error::AsymmetricLaw { .. }
        | Error::NotAperiodic { .. }
        | Error::BadProbabilities(_)
        | Error::OriginNotAllowed => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Err(e) = init_workers() {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    let command = recorded_command(&args);
    match dispatch(&cli, &command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn init_workers() -> Result<()> {
    let Ok(v) = std::env::var(WORKERS_ENV) else { return Ok(()) };
    let n: usize = v.parse().map_err(|_| Error::Config(format!("{WORKERS_ENV}={v:?} is not a worker count")))?;
    // A pool may already exist when called twice in one process; results do
    // not depend on the worker count, so keeping it is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Arguments as stored in manifests, without the archive location itself.
fn recorded_command(args: &[OsString]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in args.iter().skip(1) {
        let a = a.to_string_lossy().to_string();
        if skip {
            skip = false;
        } else if a == "--archive" {
            skip = true;
        } else if !a.starts_with("--archive=") {
            out.push(a);
        }
    }
    out
}

fn dispatch(cli: &Cli, command: &[String]) -> Result<i32> {
    let cache = (!cli.no_cache).then_some(cli.cache_dir.as_path());
    match &cli.cmd {
        Cmd::Constants(a) => constants(a, cache),
        Cmd::Green(a) => green(a, cache),
        Cmd::Simulate(a) => {
            let cfg = run_config(a)?;
            let reports = experiment::run_simulate(&cfg)?;
            if let Some(out) = &a.out {
                std::fs::write(out, to_json17(&reports)?)?;
            }
            finish_run(a, &cfg, None, cache, command, &reports)
        }
        Cmd::HeavyScan(a) => {
            let cfg = run_config(a)?;
            let ctx = RunContext::prepare(&cfg, cache, &[])?;
            let reports = experiment::run_heavy(&cfg, &ctx)?;
            if let Some(r) = reports.first() {
                for adv in r.advisories.iter().filter(|a| !a.small) {
                    eprintln!("advisory: {}", adv.note);
                }
            }
            write_csv_out(a, &reports)?;
            finish_run(a, &cfg, Some(&ctx), cache, command, &reports)
        }
        Cmd::Coverage(a) => {
            let cfg = run_config(a)?;
            let ctx = RunContext::prepare(&cfg, cache, &[])?;
            let reports = experiment::run_coverage(&cfg, &ctx)?;
            write_csv_out(a, &reports)?;
            finish_run(a, &cfg, Some(&ctx), cache, command, &reports)
        }
        Cmd::Thm13(a) => {
            let cfg = run_config(a)?;
            let ctx = RunContext::prepare(&cfg, cache, &[])?;
            let reports = experiment::run_thm13(&cfg, &ctx)?;
            write_csv_out(a, &reports)?;
            finish_run(a, &cfg, Some(&ctx), cache, command, &reports)
        }
        Cmd::Jointlaw(a) => {
            let cfg = run_config(a)?;
            let ctx = RunContext::prepare(&cfg, cache, &[cfg.site_point()?])?;
            let csv = experiment::jointlaw_csv(&cfg, &ctx)?;
            if let Some(out) = &a.out {
                std::fs::write(out, &csv)?;
            }
            match &a.archive {
                Some(dir) => {
                    let mut ar = Archive::create(dir, &cfg, "jointlaw", command)?;
                    ar.put("jointlaw.csv", csv.as_bytes())?;
                    ar.set_green_cache(cache, &ctx)?;
                    ar.finish()?;
                }
                None if a.out.is_none() => print!("{csv}"),
                None => {}
            }
            Ok(EXIT_OK)
        }
        Cmd::Estimate(a) => estimate(a),
        Cmd::Verify(a) => verify(a, cache),
    }
}

fn apply_model(cfg: &mut ExperimentConfig, m: &ModelArgs) {
    if let Some(v) = &m.model {
        cfg.model = v.clone();
    }
    if let Some(v) = m.dim {
        cfg.dim = v;
        if m.model.is_none() && cfg.site == ExperimentConfig::default().site {
            let mut e = vec!["0"; v];
            e[0] = "1";
            cfg.site = e.join(",");
        }
    }
    if let Some(v) = m.green_tol {
        cfg.green_tol = v;
    }
}

fn base_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run_config(a: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = base_config(&a.config)?;
    apply_model(&mut cfg, &a.model);
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = &a.$f { cfg.$f = v.clone(); })* };
    }
    set!(steps, horizon_factor, seeds, delta, radius, eps, coverage_radius_max, thm13_c, thm13_eps, top_k, site, kmax, jmax);
    if let Some(s) = a.seed {
        cfg.base_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_csv_out<R: SeedReport>(a: &RunArgs, reports: &[R]) -> Result<()> {
    if let Some(out) = &a.out {
        std::fs::write(out, experiment::aggregate_csv(reports)?)?;
    }
    Ok(())
}

fn finish_run<R: SeedReport>(
    a: &RunArgs,
    cfg: &ExperimentConfig,
    ctx: Option<&RunContext>,
    cache: Option<&Path>,
    command: &[String],
    reports: &[R],
) -> Result<i32> {
    match &a.archive {
        Some(dir) => {
            let mut ar = Archive::create(dir, cfg, R::NAME, command)?;
            ar.put_reports(reports)?;
            if let Some(ctx) = ctx {
                ar.set_green_cache(cache, ctx)?;
            }
            ar.finish()?;
        }
        None if a.out.is_none() => print!("{}", experiment::aggregate_csv(reports)?),
        None => {}
    }
    Ok(EXIT_OK)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn model_config(config: &Option<PathBuf>, m: &ModelArgs) -> Result<ExperimentConfig> {
    let mut cfg = base_config(config)?;
    apply_model(&mut cfg, m);
    cfg.validate()?;
    Ok(cfg)
}

fn table(cfg: &ExperimentConfig, sites: &[LatticePoint], cache: Option<&Path>) -> Result<GreenTable> {
    let dist = cfg.distribution()?;
    match cache {
        Some(dir) => GreenTable::load_or_compute(dir, &dist, sites, cfg.green_tol),
        None => GreenTable::compute(&dist, sites, cfg.green_tol),
    }
}

fn opt_cell(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        g6(x)
    }
}

#[derive(Serialize)]
struct ConstantsRow {
    x: LatticePoint,
    green: f64,
    green_err: f64,
    gamma_x: f64,
    q_x: Option<f64>,
    s_x: Option<f64>,
    m_x: f64,
}

#[derive(Serialize)]
struct ConstantsJson {
    dim: usize,
    model: String,
    gamma: f64,
    lambda: f64,
    c_d: f64,
    g0: f64,
    sites: Vec<ConstantsRow>,
}

fn constants(a: &ConstantsArgs, cache: Option<&Path>) -> Result<i32> {
    let cfg = model_config(&a.config, &a.model)?;
    if a.box_radius < 0 {
        return Err(Error::Config("--box must be >= 0".into()));
    }
    let sites = l1_box(cfg.dim, a.box_radius);
    let gt = table(&cfg, &sites, cache)?;
    let k = derive_constants(&gt, &sites)?;
    let c_d = asymptotic_constant(cfg.dim);
    let mut rows = Vec::with_capacity(sites.len());
    for x in &sites {
        let e = gt.get(x).ok_or_else(|| Error::MissingGreenValue(x.to_string()))?;
        let c = k.require(x)?;
        let finite = |v: f64| (!v.is_nan()).then_some(v);
        rows.push(ConstantsRow {
            x: x.clone(),
            green: e.value,
            green_err: e.abs_error,
            gamma_x: c.gamma_x,
            q_x: finite(c.q_x),
            s_x: finite(c.s_x),
            m_x: c.m_x,
        });
    }
    let text = match a.format {
        Format::Json => to_json17(&ConstantsJson {
            dim: cfg.dim,
            model: cfg.model.clone(),
            gamma: k.gamma,
            lambda: k.lambda,
            c_d,
            g0: k.g0,
            sites: rows,
        })?,
        Format::Csv => {
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.x.to_string(),
                        g6(r.green),
                        g6(r.green_err),
                        g6(r.gamma_x),
                        r.q_x.map(g6).unwrap_or_default(),
                        r.s_x.map(g6).unwrap_or_default(),
                        g6(r.m_x),
                    ]
                })
                .collect();
            format!(
                "# gamma={},lambda={},c_d={},G0={}\n{}",
                g6(k.gamma),
                g6(k.lambda),
                g6(c_d),
                g6(k.g0),
                csv_string(&["x", "G", "G_err", "gamma_x", "q_x", "s_x", "m_x"], &body)?
            )
        }
    };
    emit(&a.out, &text)?;
    Ok(EXIT_OK)
}

fn green(a: &GreenArgs, cache: Option<&Path>) -> Result<i32> {
    let cfg = model_config(&a.config, &a.model)?;
    let sites: Vec<LatticePoint> = if a.sites.is_empty() {
        l1_box(cfg.dim, a.box_radius)
    } else {
        a.sites.iter().map(|s| s.parse()).collect::<Result<_>>()?
    };
    if let Some(x) = sites.iter().find(|x| x.dim() != cfg.dim) {
        return Err(Error::DimensionMismatch { expected: cfg.dim, got: x.dim() });
    }
    let gt = table(&cfg, &sites, cache)?;
    let dp = match a.dp {
        Some(n) => Some(dp_oracle(&sites, &cfg.distribution()?, n as usize, None)?),
        None => None,
    };
    let mut header = vec!["x", "G", "G_err", "method"];
    if dp.is_some() {
        header.extend(["dp_value", "dp_tail_bound", "dp_extrapolated", "within_bounds"]);
    }
    let mut rows = Vec::new();
    for (i, x) in sites.iter().enumerate() {
        let e = gt.get(x).ok_or_else(|| Error::MissingGreenValue(x.to_string()))?;
        let mut row = vec![x.to_string(), g6(e.value), g6(e.abs_error), format!("{:?}", e.method).to_lowercase()];
        if let Some(dp) = &dp {
            let v = dp.values[i];
            let ok = (e.value - v.value).abs() <= e.abs_error + v.tail_bound;
            row.extend([g6(v.value), g6(v.tail_bound), g6(v.extrapolated()), ok.to_string()]);
        }
        rows.push(row);
    }
    emit(&a.out, &csv_string(&header, &rows)?)?;
    Ok(EXIT_OK)
}

fn estimate(a: &EstimateArgs) -> Result<i32> {
    let cfg = model_config(&a.config, &a.model)?;
    let dist = cfg.distribution()?;
    let x: LatticePoint = a.site.parse()?;
    if x.dim() != cfg.dim {
        return Err(Error::DimensionMismatch { expected: cfg.dim, got: x.dim() });
    }
    if a.replicas == 0 {
        return Err(Error::Config("--replicas must be >= 1".into()));
    }
    let gt = GreenTable::compute(&dist, &[x.clone()], cfg.green_tol)?;
    let k = derive_constants(&gt, &[x.clone()])?;
    let c = *k.require(&x)?;
    let h = estimate_hitting(&dist, &x, a.replicas, a.horizon, a.seed)?;
    let recs = excursion_batch(&dist, Some(&x), a.seed.wrapping_add(1), a.replicas, a.horizon)?;
    let escaped: Vec<f64> = recs.iter().map(|r| if r.completed() == 0 { 1.0 } else { 0.0 }).collect();
    let z: Vec<f64> = recs.iter().flat_map(|r| r.visits.iter().map(|&v| v as f64)).collect();
    let rows = [
        ("gamma", k.gamma, mean(&escaped), std_error(&escaped)),
        ("q_x", c.q_x, h.q_hat, h.q_se),
        ("s_x", c.s_x, h.s_hat, h.s_se),
        ("escape_both", c.escape_both(), h.never_hat, h.never_se),
        ("m_x", c.m_x, mean(&z), std_error(&z)),
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, exact, est, se)| {
            vec![name.to_string(), g6(*exact), opt_cell(*est), opt_cell(*se), opt_cell((est - exact) / se)]
        })
        .collect();
    let note = format!(
        "# x={x},replicas={},horizon={},seed={} (walks still out at the horizon count as escaped)\n",
        a.replicas, a.horizon, a.seed
    );
    emit(&a.out, &(note + &csv_string(&["quantity", "exact", "estimate", "std_error", "z"], &body)?))?;
    Ok(EXIT_OK)
}

fn verify(a: &VerifyArgs, cache: Option<&Path>) -> Result<i32> {
    if let Some(dir) = &a.archive {
        let check = verify_archive(dir)?;
        let mut text = format!("archive {} ({}, {} files)\n", dir.display(), check.kind, check.files_checked);
        for p in &check.problems {
            text.push_str(&format!("FAIL {p}\n"));
        }
        text.push_str(if check.ok() { "PASS archive replay\n" } else { "FAIL archive replay\n" });
        emit(&a.out, &text)?;
        if a.out.is_some() {
            print!("{text}");
        }
        return Ok(if check.ok() { EXIT_OK } else { EXIT_FAILURE });
    }
    let level = match a.level {
        VerifyLevel::Quick => Level::Quick,
        VerifyLevel::Full => Level::Full,
    };
    let report = run_verify(&VerifyOptions { level, cache_dir: cache.map(Path::to_path_buf), seed: a.seed });
    let text = report.to_text();
    if let Some(out) = &a.out {
        std::fs::write(out, &text)?;
    }
    print!("{text}");
    Ok(if report.passed() { EXIT_OK } else { EXIT_FAILURE })
}

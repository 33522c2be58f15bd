//! C interface: opaque handles for step laws, derived constants and walk runs.
//!
//! Every fallible call returns an [`LhStatus`]; on failure the message is kept
//! per thread and can be read with [`lh_last_error`]. Handles are released
//! with their `*_free` function; passing NULL to a free function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lattice_heavy::error::Error;
use lattice_heavy::green::{derive_constants, DerivedConstants, GreenTable};
use lattice_heavy::jointlaw::{joint_pmf_oracle, phi, psi, SiteLaw};
use lattice_heavy::lattice::{build_distribution, parse_distribution_spec, LatticePoint, StepDistribution};
use lattice_heavy::walk::{simulate_replica, SimOptions, WalkRun};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionTooSmall = 3,
    OutOfDomain = 4,
    NumericalFailure = 5,
    Io = 6,
    BufferTooSmall = 7,
    MissingValue = 8,
    Panic = 99,
}

/// A validated step distribution.
pub struct LhDistribution(StepDistribution);

/// Green values and derived constants for a set of sites.
pub struct LhConstants {
    dist: StepDistribution,
    constants: DerivedConstants,
}

/// A simulated walk with its local-time fields.
pub struct LhWalkRun(WalkRun);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LhSiteConstants {
    pub green: f64,
    pub gamma_x: f64,
    pub q_x: f64,
    pub s_x: f64,
    pub m_x: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend_from_slice(msg.as_bytes());
    });
}

fn status_of(e: &Error) -> LhStatus {
    match e {
        Error::DimensionTooSmall { .. } => LhStatus::DimensionTooSmall,
        Error::OutOfDomain { .. } => LhStatus::OutOfDomain,
        Error::NoConvergence { .. } | Error::SpectrumDegenerate { .. } | Error::BoxTooSmall { .. } => {
            LhStatus::NumericalFailure
        }
        Error::MissingGreenValue(_) | Error::MissingConstants(_) => LhStatus::MissingValue,
        Error::Io(_) => LhStatus::Io,
        _ => LhStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), LhStatus>) -> LhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LhStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            LhStatus::Panic
        }
    }
}

fn fail(e: Error) -> LhStatus {
    set_error(&e.to_string());
    status_of(&e)
}

fn null(what: &str) -> LhStatus {
    set_error(&format!("{what} is NULL"));
    LhStatus::NullPointer
}

unsafe fn point(coords: *const i64, dim: usize) -> Result<LatticePoint, LhStatus> {
    if coords.is_null() {
        return Err(null("coordinate pointer"));
    }
    Ok(LatticePoint::new(std::slice::from_raw_parts(coords, dim).to_vec()))
}

unsafe fn out_handle<T>(out: *mut *mut T, value: T) -> Result<(), LhStatus> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, LhStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, v: T) -> Result<(), LhStatus> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = v;
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be NULL or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn lh_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            ptr::copy_nonoverlapping(e.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// The simple symmetric walk on Z^dim.
///
/// # Safety
/// `out` must be valid for writing a pointer.
#[no_mangle]
pub unsafe extern "C" fn lh_distribution_simple(dim: usize, out: *mut *mut LhDistribution) -> LhStatus {
    guard(|| {
        let d = StepDistribution::simple(dim).map_err(fail)?;
        out_handle(out, LhDistribution(d))
    })
}

/// A distribution from spec text: a `dim=<d>` header, then `x1 ... xd : p`
/// lines or the token `simple`.
///
/// # Safety
/// `spec` must be a NUL-terminated string; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn lh_distribution_from_spec(spec: *const c_char, out: *mut *mut LhDistribution) -> LhStatus {
    guard(|| {
        if spec.is_null() {
            return Err(null("spec"));
        }
        let text = CStr::from_ptr(spec).to_str().map_err(|_| {
            set_error("spec is not UTF-8");
            LhStatus::InvalidArgument
        })?;
        let (d, s) = parse_distribution_spec(text).map_err(fail)?;
        let dist = build_distribution(d, &s).map_err(fail)?;
        out_handle(out, LhDistribution(dist))
    })
}

/// # Safety
/// `dist` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lh_distribution_dim(dist: *const LhDistribution) -> usize {
    dist.as_ref().map_or(0, |d| d.0.dim())
}

/// # Safety
/// `dist` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lh_distribution_free(dist: *mut LhDistribution) {
    if !dist.is_null() {
        drop(Box::from_raw(dist));
    }
}

/// Green values by quadrature at `n_sites` sites (row-major, `dim` coordinates
/// each) plus the origin, and the constants derived from them.
///
/// # Safety
/// `sites` must hold `n_sites * dim` values; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn lh_constants_compute(
    dist: *const LhDistribution,
    sites: *const i64,
    n_sites: usize,
    tol: f64,
    out: *mut *mut LhConstants,
) -> LhStatus {
    guard(|| {
        let dist = &handle(dist, "distribution")?.0;
        let d = dist.dim();
        let mut pts = vec![LatticePoint::origin(d)];
        if n_sites > 0 {
            if sites.is_null() {
                return Err(null("sites"));
            }
            let raw = std::slice::from_raw_parts(sites, n_sites * d);
            pts.extend(raw.chunks(d).map(|c| LatticePoint::new(c.to_vec())));
        }
        let gt = GreenTable::compute(dist, &pts, tol).map_err(fail)?;
        let constants = derive_constants(&gt, &pts).map_err(fail)?;
        out_handle(out, LhConstants { dist: dist.clone(), constants })
    })
}

/// Escape probability `gamma`, `lambda` and `G(0)`; any output may be NULL.
///
/// # Safety
/// `c` must be a live handle; non-NULL outputs must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn lh_constants_global(
    c: *const LhConstants,
    gamma: *mut f64,
    lambda: *mut f64,
    g0: *mut f64,
) -> LhStatus {
    guard(|| {
        let k = &handle(c, "constants")?.constants;
        for (p, v) in [(gamma, k.gamma), (lambda, k.lambda), (g0, k.g0)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Per-site constants at `x` (`dim` coordinates). `q_x` and `s_x` are NaN at
/// the origin.
///
/// # Safety
/// `c` must be a live handle; `x` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn lh_constants_site(
    c: *const LhConstants,
    x: *const i64,
    out: *mut LhSiteConstants,
) -> LhStatus {
    guard(|| {
        let c = handle(c, "constants")?;
        let x = point(x, c.dist.dim())?;
        let s = c.constants.require(&x).map_err(fail)?;
        write_out(out, LhSiteConstants { green: s.green, gamma_x: s.gamma_x, q_x: s.q_x, s_x: s.s_x, m_x: s.m_x })
    })
}

/// # Safety
/// `c` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lh_constants_free(c: *mut LhConstants) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

unsafe fn site_law(c: *const LhConstants, x: *const i64) -> Result<SiteLaw, LhStatus> {
    let c = handle(c, "constants")?;
    let x = point(x, c.dist.dim())?;
    SiteLaw::from_constants(&c.constants, &x).map_err(fail)
}

/// Generating function of the visits to `x` per returning excursion.
///
/// # Safety
/// `c` must be a live handle; `x` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn lh_phi(c: *const LhConstants, x: *const i64, v: f64, out: *mut f64) -> LhStatus {
    guard(|| {
        let law = site_law(c, x)?;
        write_out(out, phi(v, &law).map_err(fail)?)
    })
}

/// Generating function of the visits to `x` after the last return.
///
/// # Safety
/// `c` must be a live handle; `x` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn lh_psi(c: *const LhConstants, x: *const i64, v: f64, out: *mut f64) -> LhStatus {
    guard(|| {
        let law = site_law(c, x)?;
        write_out(out, psi(v, &law).map_err(fail)?)
    })
}

/// Joint pmf `P(xi(0) = k, xi(x) = j)` for `k <= kmax`, `j <= jmax`, written
/// row-major into `out`, which must hold `(kmax+1)*(jmax+1)` doubles.
///
/// # Safety
/// `c` must be a live handle; `x` must hold `dim` values; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lh_jointlaw_pmf(
    c: *const LhConstants,
    x: *const i64,
    kmax: usize,
    jmax: usize,
    out: *mut f64,
    len: usize,
) -> LhStatus {
    guard(|| {
        let law = site_law(c, x)?;
        let need = (kmax + 1) * (jmax + 1);
        if len < need {
            set_error(&format!("buffer holds {len} values, {need} needed"));
            return Err(LhStatus::BufferTooSmall);
        }
        if out.is_null() {
            return Err(null("output buffer"));
        }
        let jl = joint_pmf_oracle(&law, kmax, jmax);
        let buf = std::slice::from_raw_parts_mut(out, need);
        for (k, row) in jl.pmf.iter().enumerate() {
            buf[k * (jmax + 1)..(k + 1) * (jmax + 1)].copy_from_slice(row);
        }
        Ok(())
    })
}

/// Simulates `n` steps of replica `stream` of `seed`, tracking local times to
/// the horizon `horizon_factor * n`.
///
/// # Safety
/// `dist` must be a live handle; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn lh_walk_simulate(
    dist: *const LhDistribution,
    n: u64,
    seed: u64,
    stream: u64,
    horizon_factor: u64,
    out: *mut *mut LhWalkRun,
) -> LhStatus {
    guard(|| {
        let dist = &handle(dist, "distribution")?.0;
        if horizon_factor == 0 {
            set_error("horizon_factor must be >= 1");
            return Err(LhStatus::InvalidArgument);
        }
        let opts = SimOptions { horizon_factor, ..Default::default() };
        let run = simulate_replica(dist, n, seed, stream, &opts).map_err(fail)?;
        out_handle(out, LhWalkRun(run))
    })
}

/// Local time at `x` up to time `n` (`at_horizon == 0`) or to the horizon.
///
/// # Safety
/// `run` must be a live handle; `x` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn lh_walk_local_time(
    run: *const LhWalkRun,
    x: *const i64,
    at_horizon: i32,
    out: *mut u64,
) -> LhStatus {
    guard(|| {
        let run = &handle(run, "walk run")?.0;
        let x = point(x, run.dist().dim())?;
        let field = if at_horizon != 0 { run.field_h() } else { run.field_n() };
        write_out(out, field.get(&x))
    })
}

/// Largest local time up to time `n`; optionally the lexicographically first
/// maximiser, written to `argmax` (`dim` values).
///
/// # Safety
/// `run` must be a live handle; `argmax` must be NULL or hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn lh_walk_max_local_time(run: *const LhWalkRun, max: *mut u64, argmax: *mut i64) -> LhStatus {
    guard(|| {
        let run = &handle(run, "walk run")?.0;
        let (m, sites) = run.field_n().max_local_time();
        if !argmax.is_null() {
            if let Some(z) = sites.first() {
                ptr::copy_nonoverlapping(z.coords().as_ptr(), argmax, z.dim());
            }
        }
        write_out(max, m)
    })
}

/// Number of distinct sites visited up to time `n`.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lh_walk_distinct_sites(run: *const LhWalkRun, out: *mut u64) -> LhStatus {
    guard(|| {
        let run = &handle(run, "walk run")?.0;
        write_out(out, run.field_n().distinct_sites() as u64)
    })
}

/// # Safety
/// `run` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lh_walk_free(run: *mut LhWalkRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

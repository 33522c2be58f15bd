//! Exact joint law of the total local times at `0` and at a site `x != 0`.
//!
//! The walk's visits to `x` split into the visits made during each completed
//! excursion from the origin (i.i.d., law [`ExcursionLaw::finite`]) plus the
//! visits after the last return (law [`ExcursionLaw::infinite`]). Everything
//! here is a closed form in `gamma`, `gamma_x` (equivalently `q_x`, `s_x`),
//! with a convolution oracle that builds the joint pmf from the excursion laws
//! and an independent negative-binomial representation used for the tails.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::green::{DerivedConstants, SiteConstants};
use crate::lattice::LatticePoint;
use crate::sum::{compensated_sum, NeumaierSum};

/// Default truncation for the joint pmf in both directions.
pub const DEFAULT_TRUNCATION: usize = 40;

/// The constants that determine the joint law for one site.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SiteLaw {
    pub gamma: f64,
    pub gamma_x: f64,
    pub q_x: f64,
    pub s_x: f64,
    pub m_x: f64,
}

impl SiteLaw {
    /// From the escape probabilities alone, via `q_x = 1 - gamma/(1-(1-gamma_x)^2)`
    /// and `s_x = (1-gamma_x)(1-q_x)`.
    pub fn from_gammas(gamma: f64, gamma_x: f64) -> Self {
        let h = 1.0 - gamma_x;
        let q_x = 1.0 - gamma / (1.0 - h * h);
        let s_x = h * (1.0 - q_x);
        Self { gamma, gamma_x, q_x, s_x, m_x: h * h / (1.0 - gamma) }
    }

    pub fn from_site(gamma: f64, site: &SiteConstants) -> Self {
        Self { gamma, gamma_x: site.gamma_x, q_x: site.q_x, s_x: site.s_x, m_x: site.m_x }
    }

    pub fn from_constants(c: &DerivedConstants, x: &LatticePoint) -> Result<Self> {
        if x.is_origin() {
            return Err(Error::MissingConstants("joint law needs x != 0".into()));
        }
        Ok(Self::from_site(c.gamma, c.require(x)?))
    }

    /// `1 - q_x - s_x`: neither return nor hit.
    pub fn escape_both(&self) -> f64 {
        1.0 - self.q_x - self.s_x
    }

    /// Upper end of the window on which the moment generating functions exist.
    pub fn bare_upper(&self) -> f64 {
        (1.0 / (1.0 - self.gamma)).ln()
    }

    /// Window on which the small-`v` estimates hold.
    pub fn estimate_window(&self) -> (f64, f64) {
        let g = self.gamma * (1.0 - self.gamma);
        ((1.0 - g).ln(), (1.0 + g).ln())
    }

    fn coefficients(&self) -> (f64, f64, f64) {
        let g = self.gamma;
        let h = 1.0 - self.gamma_x;
        let u = ((1.0 - g).powi(2) - h * h) / (g * (1.0 - g));
        let y = (1.0 - g - h * h) / g;
        let p = (self.gamma_x - g) / g;
        (u, y, p)
    }
}

/// Which admissibility window to enforce on `v`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Window {
    /// `v < log(1/(1-gamma))`, where the generating functions are finite.
    Bare,
    /// `log(1-gamma(1-gamma)) < v < log(1+gamma(1-gamma))`.
    Estimate,
}

fn check_window(v: f64, law: &SiteLaw, window: Window) -> Result<()> {
    let (lo, hi) = match window {
        Window::Bare => (f64::NEG_INFINITY, law.bare_upper()),
        Window::Estimate => law.estimate_window(),
    };
    if v.is_nan() || v <= lo || v >= hi {
        return Err(Error::OutOfDomain { v, lo, hi });
    }
    Ok(())
}

fn ratio(num: f64, den: f64, v: f64, law: &SiteLaw) -> Result<f64> {
    if den <= 0.0 {
        return Err(Error::OutOfDomain { v, lo: f64::NEG_INFINITY, hi: law.bare_upper() });
    }
    Ok(num / den)
}

/// Conditional generating function of the visits to `x` during one excursion,
/// given that the excursion returns.
pub fn phi(v: f64, law: &SiteLaw) -> Result<f64> {
    phi_in(v, law, Window::Bare)
}

pub fn phi_in(v: f64, law: &SiteLaw, window: Window) -> Result<f64> {
    check_window(v, law, window)?;
    let w = v.exp_m1();
    let (u, y, _) = law.coefficients();
    ratio(1.0 - u * w, 1.0 - y * w, v, law)
}

/// Conditional generating function of the visits to `x` after the last return.
pub fn psi(v: f64, law: &SiteLaw) -> Result<f64> {
    psi_in(v, law, Window::Bare)
}

pub fn psi_in(v: f64, law: &SiteLaw, window: Window) -> Result<f64> {
    check_window(v, law, window)?;
    let w = v.exp_m1();
    let (_, y, p) = law.coefficients();
    ratio(1.0 - p * w, 1.0 - y * w, v, law)
}

/// `E(exp(v xi(x,inf)); xi(0,inf) = k)` evaluated two ways.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RestrictedMgf {
    /// From the excursion probabilities `q_x`, `s_x`.
    pub excursion_form: f64,
    /// `gamma (1-gamma)^k phi(v)^k psi(v)`.
    pub factored_form: f64,
}

impl RestrictedMgf {
    pub fn relative_gap(&self) -> f64 {
        (self.excursion_form - self.factored_form).abs() / self.excursion_form.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn restricted_mgf(v: f64, k: u32, law: &SiteLaw) -> Result<RestrictedMgf> {
    check_window(v, law, Window::Bare)?;
    let (q, s) = (law.q_x, law.s_x);
    let ev = v.exp();
    let den = 1.0 - q * ev;
    if den <= 0.0 {
        return Err(Error::OutOfDomain { v, lo: f64::NEG_INFINITY, hi: law.bare_upper() });
    }
    let per_excursion = q + s * s * ev / den;
    let last = law.escape_both() * (1.0 + s * ev / den);
    let excursion_form = per_excursion.powi(k as i32) * last;
    let g = law.gamma;
    let factored_form = g * (1.0 - g).powi(k as i32) * phi(v, law)?.powi(k as i32) * psi(v, law)?;
    Ok(RestrictedMgf { excursion_form, factored_form })
}

/// Laws of the visits to `x` during one excursion from 0, jointly with whether
/// the excursion returns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExcursionLaw {
    pub q_x: f64,
    pub s_x: f64,
}

impl ExcursionLaw {
    pub fn new(law: &SiteLaw) -> Self {
        Self { q_x: law.q_x, s_x: law.s_x }
    }

    /// `P(Z = j, T < inf)`.
    pub fn finite(&self, j: u32) -> f64 {
        if j == 0 {
            self.q_x
        } else {
            self.s_x * self.s_x * self.q_x.powi(j as i32 - 1)
        }
    }

    /// `P(Z = j, T = inf)`.
    pub fn infinite(&self, j: u32) -> f64 {
        let e = 1.0 - self.q_x - self.s_x;
        if j == 0 {
            e
        } else {
            self.s_x * e * self.q_x.powi(j as i32 - 1)
        }
    }

    /// Total mass of [`Self::finite`], equal to `1 - gamma`.
    pub fn finite_total(&self) -> f64 {
        self.q_x + self.s_x * self.s_x / (1.0 - self.q_x)
    }

    /// Total mass of [`Self::infinite`], equal to `gamma`.
    pub fn infinite_total(&self) -> f64 {
        (1.0 - self.q_x - self.s_x) * (1.0 + self.s_x / (1.0 - self.q_x))
    }
}

/// Truncated joint pmf `P(xi(0,inf) = k, xi(x,inf) = j)` with analytic tails.
#[derive(Clone, Debug, Serialize)]
pub struct JointLaw {
    pub law: SiteLaw,
    pub k_max: usize,
    pub j_max: usize,
    /// `pmf[k][j]` for `k <= k_max`, `j <= j_max`.
    pub pmf: Vec<Vec<f64>>,
    /// `sum_{j > j_max} P(k, j)` for each `k <= k_max`.
    pub column_tail: Vec<f64>,
    /// `P(xi(0,inf) > k_max) = (1-gamma)^(k_max+1)`.
    pub row_tail: f64,
}

impl JointLaw {
    /// Total mass including both tails.
    pub fn total_mass(&self) -> f64 {
        let mut acc = NeumaierSum::new();
        for (row, tail) in self.pmf.iter().zip(&self.column_tail) {
            for &p in row {
                acc.add(p);
            }
            acc.add(*tail);
        }
        acc.add(self.row_tail);
        acc.value()
    }

    /// `sum_j P(k, j)` including the column tail.
    pub fn row_mass(&self, k: usize) -> f64 {
        compensated_sum(self.pmf[k].iter().copied().chain(std::iter::once(self.column_tail[k])))
    }

    /// `sum_{k <= k_max} P(k, j)`.
    pub fn column_mass(&self, j: usize) -> f64 {
        compensated_sum(self.pmf.iter().map(|row| row[j]))
    }

    /// `sum_j P(k, j) e^{v j}` over the truncated row plus the exact tail
    /// contribution, which follows from the negative-binomial representation.
    pub fn row_mgf(&self, k: usize, v: f64) -> f64 {
        let head = compensated_sum(self.pmf[k].iter().enumerate().map(|(j, p)| p * (v * j as f64).exp()));
        head + nb_row_tail_mgf(&self.law, k, self.j_max, v)
    }

    /// CSV with header `k,j,probability`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,j,probability\n");
        for (k, row) in self.pmf.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                s.push_str(&format!("{k},{j},{}\n", crate::io::g6(*p)));
            }
        }
        s
    }
}

/// Builds the joint pmf by convolving `k` copies of the returning-excursion law
/// with one copy of the final-segment law.
pub fn joint_pmf_oracle(law: &SiteLaw, k_max: usize, j_max: usize) -> JointLaw {
    let ex = ExcursionLaw::new(law);
    let finite: Vec<f64> = (0..=j_max as u32).map(|j| ex.finite(j)).collect();
    let mut acc: Vec<f64> = (0..=j_max as u32).map(|j| ex.infinite(j)).collect();
    let mut pmf = Vec::with_capacity(k_max + 1);
    let mut column_tail = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        if k > 0 {
            acc = convolve_truncated(&acc, &finite);
        }
        column_tail.push(nb_row_tail_mgf(law, k, j_max, 0.0));
        pmf.push(acc.clone());
    }
    JointLaw { law: *law, k_max, j_max, pmf, column_tail, row_tail: (1.0 - law.gamma).powi(k_max as i32 + 1) }
}

fn convolve_truncated(a: &[f64], b: &[f64]) -> Vec<f64> {
    (0..a.len())
        .map(|j| compensated_sum((0..=j).map(|i| a[i] * b[j - i])))
        .collect()
}

/// Weights `w_n` of the row-`k` law written as a mixture of sums of `n`
/// geometric(`q_x`) variables on `{1, 2, ...}`.
fn nb_weights(law: &SiteLaw, k: usize) -> Vec<f64> {
    let q = law.q_x;
    let alpha = law.s_x * law.s_x / (1.0 - q);
    let beta0 = law.escape_both();
    let beta1 = beta0 * law.s_x / (1.0 - q);
    // (q + alpha G)^k (beta0 + beta1 G), expanded in powers of G.
    let mut binom = vec![0.0; k + 1];
    let mut c = 1.0;
    for (n, b) in binom.iter_mut().enumerate() {
        *b = c * q.powi((k - n) as i32) * alpha.powi(n as i32);
        c = c * (k - n) as f64 / (n + 1) as f64;
    }
    let mut w = vec![0.0; k + 2];
    for n in 0..=k {
        w[n] += binom[n] * beta0;
        w[n + 1] += binom[n] * beta1;
    }
    w
}

/// `sum_{j > j_max} P(k, j) e^{v j}` in closed form.
///
/// A sum of `n` geometric(`q`) variables exceeds `J` iff fewer than `n`
/// successes occur in the first `J` Bernoulli(`1-q`) trials, and the tilted
/// version follows from the memoryless structure: conditioned on having `i < n`
/// successes at time `J`, the remaining `n - i` geometrics contribute
/// `((1-q) e^v / (1 - q e^v))^(n-i)`.
fn nb_row_tail_mgf(law: &SiteLaw, k: usize, j_max: usize, v: f64) -> f64 {
    let q = law.q_x;
    let p = 1.0 - q;
    let ev = v.exp();
    let g = p * ev / (1.0 - q * ev);
    let weights = nb_weights(law, k);
    let jm = j_max as i32;
    // Tilted binomial terms: C(J, i) (p e^v)^i (q e^v)^(J-i).
    let mut terms = Vec::with_capacity(weights.len());
    let mut c = 1.0;
    for i in 0..weights.len() {
        if i as i32 > jm {
            terms.push(0.0);
            continue;
        }
        terms.push(c * (p * ev).powi(i as i32) * (q * ev).powi(jm - i as i32));
        c = c * (jm - i as i32) as f64 / (i + 1) as f64;
    }
    let mut acc = NeumaierSum::new();
    for (n, &w) in weights.iter().enumerate().skip(1) {
        for i in 0..n {
            acc.add(w * terms[i] * g.powi((n - i) as i32));
        }
    }
    acc.value()
}

/// `P(k, j)` from the negative-binomial mixture; independent of the
/// convolution route.
pub fn joint_pmf_closed_form(law: &SiteLaw, k: usize, j: usize) -> f64 {
    let q = law.q_x;
    let p = 1.0 - q;
    let weights = nb_weights(law, k);
    if j == 0 {
        return weights[0];
    }
    let mut acc = NeumaierSum::new();
    for (n, &w) in weights.iter().enumerate().skip(1) {
        if n > j {
            break;
        }
        // C(j-1, n-1) p^n q^(j-n)
        let mut c = 1.0;
        for i in 0..(n - 1) {
            c = c * (j - 1 - i) as f64 / (i + 1) as f64;
        }
        acc.add(w * c * p.powi(n as i32) * q.powi((j - n) as i32));
    }
    acc.value()
}

/// `P(xi(x, inf) = j)`.
pub fn marginal_visit_law(law: &SiteLaw, j: u32) -> f64 {
    if j == 0 {
        law.gamma_x
    } else {
        (1.0 - law.gamma_x) * (1.0 - law.gamma).powi(j as i32 - 1) * law.gamma
    }
}

/// Explicit constant `K` with `|log phi(v) - m_x v| <= m_x v^2 K` for `|v| <= v_max`,
/// from the geometric series bounding `log((1-u)/(1-y)) - (y-u)`.
///
/// Returns `None` when the series ratio reaches 1 on the window.
pub fn log_phi_constant(gamma: f64, v_max: f64) -> Option<f64> {
    assert!(v_max > 0.0);
    let w_max = v_max.exp_m1();
    let a = w_max / v_max;
    let rho = w_max / (gamma * (1.0 - gamma));
    if rho >= 1.0 {
        return None;
    }
    Some(a * a / (gamma * (1.0 - gamma) * (1.0 - rho)) + v_max.exp() / 2.0)
}

/// Right-hand side of the bound `psi(v) <= (1 + |e^v-1|) / (1 - |e^v-1|/gamma)`.
pub fn psi_upper_bound(v: f64, gamma: f64) -> f64 {
    let w = v.exp_m1().abs();
    (1.0 + w) / (1.0 - w / gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    const G0: f64 = 1.516_386_059_151_978;

    fn e1_law() -> SiteLaw {
        let gamma = 1.0 / G0;
        // G(e1) = G(0) - 1 gives gamma_e1 = gamma.
        SiteLaw::from_gammas(gamma, 1.0 - (G0 - 1.0) / G0)
    }

    fn law_for(hit: f64) -> SiteLaw {
        SiteLaw::from_gammas(1.0 / G0, 1.0 - hit)
    }

    #[test]
    fn phi_psi_at_zero() {
        for law in [e1_law(), law_for(0.1), law_for(0.3)] {
            assert_eq!(phi(0.0, &law).unwrap(), 1.0);
            assert_eq!(psi(0.0, &law).unwrap(), 1.0);
        }
    }

    #[test]
    fn phi_derivative_is_m_x() {
        for law in [e1_law(), law_for(0.05), law_for(0.2)] {
            let h = 1e-6;
            let d = (phi(h, &law).unwrap() - phi(-h, &law).unwrap()) / (2.0 * h);
            assert!((d - law.m_x).abs() < 1e-6 * 10.0, "{d} vs {}", law.m_x);
        }
    }

    #[test]
    fn spec_bracket_for_log_phi() {
        let law = e1_law();
        let g = law.gamma * (1.0 - law.gamma);
        let lhs = (phi(0.1, &law).unwrap().ln() / law.m_x - 0.1).abs();
        let rhs = 0.01 * (1.0 / g) / (1.0 - 0.11 / g);
        assert!(lhs <= rhs, "{lhs} > {rhs}");
        let k = log_phi_constant(law.gamma, 0.1).unwrap();
        assert!(lhs * law.m_x <= law.m_x * 0.01 * k);
    }

    #[test]
    fn psi_bound_and_specialisation() {
        let law = e1_law();
        let v = 0.05;
        assert!(psi(v, &law).unwrap() <= psi_upper_bound(v, law.gamma));
        // gamma_x = gamma kills the numerator term.
        let g = law.gamma;
        let want = 1.0 / (1.0 - (1.0 - g - (1.0 - g).powi(2)) * v.exp_m1() / g);
        assert!((psi(v, &law).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn windows() {
        let law = e1_law();
        assert!(matches!(phi(law.bare_upper(), &law), Err(Error::OutOfDomain { .. })));
        assert!(phi(law.bare_upper() - 1e-3, &law).is_ok());
        let (lo, hi) = law.estimate_window();
        assert!(phi_in(hi, &law, Window::Estimate).is_err());
        assert!(psi_in(lo, &law, Window::Estimate).is_err());
        assert!(psi_in(0.5 * hi, &law, Window::Estimate).is_ok());
        assert!(restricted_mgf(1.5, 0, &law).is_err());
    }

    #[test]
    fn restricted_mgf_forms() {
        let law = e1_law();
        for k in 0..8 {
            let r = restricted_mgf(0.0, k, &law).unwrap();
            let want = law.gamma * (1.0 - law.gamma).powi(k as i32);
            assert!((r.excursion_form - want).abs() < 1e-15);
        }
        let r = restricted_mgf(0.1, 2, &law).unwrap();
        assert!(r.relative_gap() < 1e-12);
        let far = restricted_mgf(-60.0, 0, &law).unwrap();
        assert!((far.excursion_form - law.escape_both()).abs() < 1e-15);
    }

    #[test]
    fn excursion_law_totals() {
        for law in [e1_law(), law_for(0.07), law_for(0.25)] {
            let ex = ExcursionLaw::new(&law);
            assert!((ex.finite_total() - (1.0 - law.gamma)).abs() < 1e-12);
            assert!((ex.infinite_total() - law.gamma).abs() < 1e-12);
            let head: f64 = (0..400).map(|j| ex.finite(j)).sum();
            assert!((head - ex.finite_total()).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_atoms_and_mass() {
        let law = e1_law();
        let jl = joint_pmf_oracle(&law, 40, 40);
        assert!((jl.pmf[0][0] - law.escape_both()).abs() < 1e-16);
        assert!((jl.pmf[0][1] - law.s_x * law.escape_both()).abs() < 1e-16);
        assert!((jl.total_mass() - 1.0).abs() < 1e-12);
        for k in 0..=40 {
            let want = law.gamma * (1.0 - law.gamma).powi(k as i32);
            assert!((jl.row_mass(k) - want).abs() <= 1e-13 * want, "row {k}: {} vs {want}", jl.row_mass(k));
        }
    }

    #[test]
    fn convolution_matches_closed_form() {
        let law = law_for(0.2);
        let jl = joint_pmf_oracle(&law, 12, 30);
        for k in 0..=12 {
            for j in 0..=30 {
                let a = jl.pmf[k][j];
                let b = joint_pmf_closed_form(&law, k, j);
                assert!((a - b).abs() <= 1e-13 * b + 1e-300, "k={k} j={j}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn marginal_consistency() {
        let law = e1_law();
        let jl = joint_pmf_oracle(&law, 40, 40);
        let total: f64 = (0..2000).map(|j| marginal_visit_law(&law, j)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(marginal_visit_law(&law, 0), law.gamma_x);
        for j in 0..=40 {
            assert!((jl.column_mass(j) - marginal_visit_law(&law, j as u32)).abs() < 1e-10);
        }
    }

    #[test]
    fn csv_shape() {
        let jl = joint_pmf_oracle(&e1_law(), 2, 3);
        let csv = jl.to_csv();
        assert!(csv.starts_with("k,j,probability\n0,0,"));
        assert_eq!(csv.lines().count(), 1 + 3 * 4);
    }
}

use std::collections::BTreeMap;

use serde::Serialize;

use super::table::GreenTable;
use crate::error::{Error, Result};
use crate::lattice::LatticePoint;

/// Per-site constants for a site `x`.
///
/// For `x = 0` only `gamma_x = gamma` and `m_x = 1` are meaningful; `q_x` and
/// `s_x` are reported as NaN.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SiteConstants {
    /// `G(x)`.
    pub green: f64,
    /// Probability of never hitting `x`: `1 - G(x)/G(0)`.
    pub gamma_x: f64,
    /// Probability of returning to 0 before hitting `x`.
    pub q_x: f64,
    /// Probability of hitting `x` before returning to 0.
    pub s_x: f64,
    /// Expected visits to `x` per completed excursion from 0.
    pub m_x: f64,
}

impl SiteConstants {
    /// Never-return-and-never-hit probability `1 - q_x - s_x`.
    pub fn escape_both(&self) -> f64 {
        1.0 - self.q_x - self.s_x
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DerivedConstants {
    pub g0: f64,
    /// Escape probability `1/G(0)`.
    pub gamma: f64,
    /// `-1 / log(1 - gamma)`.
    pub lambda: f64,
    pub sites: BTreeMap<LatticePoint, SiteConstants>,
}

impl DerivedConstants {
    /// Constants from `G(0)` and `G(x)` directly.
    pub fn from_green(g0: f64, gx: f64, x_is_origin: bool) -> (f64, f64, SiteConstants) {
        let gamma = 1.0 / g0;
        let lambda = -1.0 / (1.0 - gamma).ln();
        let site = if x_is_origin {
            SiteConstants { green: g0, gamma_x: gamma, q_x: f64::NAN, s_x: f64::NAN, m_x: 1.0 }
        } else {
            let hit = gx / g0; // 1 - gamma_x
            let gamma_x = 1.0 - hit;
            let q_x = 1.0 - gamma / (1.0 - hit * hit);
            let s_x = hit * (1.0 - q_x);
            let m_x = hit * hit / (1.0 - gamma);
            SiteConstants { green: gx, gamma_x, q_x, s_x, m_x }
        };
        (gamma, lambda, site)
    }

    pub fn site(&self, x: &LatticePoint) -> Option<&SiteConstants> {
        self.sites.get(x)
    }

    pub fn m(&self, x: &LatticePoint) -> Option<f64> {
        self.sites.get(x).map(|s| s.m_x)
    }

    pub fn require(&self, x: &LatticePoint) -> Result<&SiteConstants> {
        self.sites.get(x).ok_or_else(|| Error::MissingConstants(x.to_string()))
    }
}

/// `gamma`, `lambda` and the per-site table for `sites` from a Green table.
pub fn derive_constants(gt: &GreenTable, sites: &[LatticePoint]) -> Result<DerivedConstants> {
    let origin = LatticePoint::origin(gt.dim());
    let g0 = gt.value(&origin)?;
    let (gamma, lambda, _) = DerivedConstants::from_green(g0, g0, true);
    let mut table = BTreeMap::new();
    for x in sites {
        let gx = gt.value(x)?;
        let (_, _, s) = DerivedConstants::from_green(g0, gx, x.is_origin());
        table.insert(x.clone(), s);
    }
    Ok(DerivedConstants { g0, gamma, lambda, sites: table })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Watson's constant for the cubic lattice.
    const G0: f64 = 1.516_386_059_151_978;

    #[test]
    fn simple_walk_d3_neighbour() {
        // G(e1) = G(0) - 1 for the simple walk.
        let (gamma, lambda, s) = DerivedConstants::from_green(G0, G0 - 1.0, false);
        assert!((gamma - 0.659_463).abs() < 1e-6);
        assert!((lambda - 0.928_31).abs() < 1e-5);
        assert!((s.gamma_x - gamma).abs() < 1e-15);
        assert!((s.q_x - 0.254_031).abs() < 1e-6);
        assert!((s.s_x - s.q_x).abs() < 1e-15);
        assert!((s.m_x - 0.340_537).abs() < 1e-6);
        assert!((s.escape_both() - 0.491_939).abs() < 1e-6);
    }

    #[test]
    fn origin_row() {
        let (gamma, _, s) = DerivedConstants::from_green(G0, G0, true);
        assert_eq!(s.m_x, 1.0);
        assert_eq!(s.gamma_x, gamma);
        assert!(s.q_x.is_nan());
    }

    #[test]
    fn missing_values_are_errors() {
        let d = crate::lattice::StepDistribution::simple(3).unwrap();
        let gt = GreenTable::new(&d, 1e-6);
        assert!(matches!(derive_constants(&gt, &[]), Err(Error::MissingGreenValue(_))));
    }
}

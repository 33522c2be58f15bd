//! The Green function `G(x) = sum_n P(S_n = x)`, computed by torus quadrature
//! and cross-checked by a step-iteration oracle, plus every constant derived
//! from it.

pub mod dp;
pub mod quadrature;

mod constants;
mod table;

pub use constants::{derive_constants, DerivedConstants, SiteConstants};
pub use dp::{dp_oracle, green_dp_oracle, DpRun, DpValue};
pub use quadrature::{green_quadrature, green_quadrature_many, QuadValue};
pub use table::{GreenEntry, GreenMethod, GreenTable};

use crate::error::{Error, Result};
use crate::lattice::{gamma_half, q_norm_sq, LatticePoint, StepDistribution};

/// `c_d = Gamma(d/2 - 1) / (2 pi^{d/2})`.
pub fn asymptotic_constant(dim: usize) -> f64 {
    assert!(dim >= 3);
    gamma_half(dim - 2) / (2.0 * std::f64::consts::PI.powf(dim as f64 / 2.0))
}

/// Leading-order Green asymptote `c_d |Q|^{-1/2} ||x||^{2-d}`.
pub fn green_asymptotic(x: &LatticePoint, dist: &StepDistribution) -> Result<f64> {
    if x.dim() != dist.dim() {
        return Err(Error::DimensionMismatch { expected: dist.dim(), got: x.dim() });
    }
    if x.is_origin() {
        return Err(Error::OriginNotAllowed);
    }
    let d = dist.dim();
    let cov = dist.covariance();
    let norm = q_norm_sq(x, cov).sqrt();
    Ok(asymptotic_constant(d) / cov.det().sqrt() * norm.powi(2 - d as i32))
}

/// Lattice points with `|x|_1 <= k`, lexicographic.
pub fn l1_box(dim: usize, k: i64) -> Vec<LatticePoint> {
    let mut out = Vec::new();
    let mut cur = vec![0i64; dim];
    fn rec(cur: &mut Vec<i64>, axis: usize, budget: i64, out: &mut Vec<LatticePoint>) {
        if axis == cur.len() {
            out.push(LatticePoint::new(cur.clone()));
            return;
        }
        for v in -budget..=budget {
            cur[axis] = v;
            rec(cur, axis + 1, budget - v.abs(), out);
        }
    }
    rec(&mut cur, 0, k, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c3_is_one_over_two_pi() {
        assert!((asymptotic_constant(3) - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-16);
        // d = 4: Gamma(1) / (2 pi^2)
        assert!((asymptotic_constant(4) - 1.0 / (2.0 * std::f64::consts::PI.powi(2))).abs() < 1e-16);
    }

    #[test]
    fn simple_walk_asymptote() {
        let d = StepDistribution::simple(3).unwrap();
        let x = LatticePoint::axis(3, 0, 20);
        let a = green_asymptotic(&x, &d).unwrap();
        assert!((a - 3.0 / (2.0 * std::f64::consts::PI * 20.0)).abs() < 1e-15);
        assert!((a - 0.02387).abs() < 1e-5);
        assert_eq!(a, green_asymptotic(&x.neg(), &d).unwrap());
        assert!(matches!(green_asymptotic(&LatticePoint::origin(3), &d), Err(Error::OriginNotAllowed)));
    }

    #[test]
    fn l1_box_counts() {
        assert_eq!(l1_box(3, 1).len(), 7);
        assert_eq!(l1_box(3, 2).len(), 25);
        assert_eq!(l1_box(5, 1).len(), 11);
    }
}

//! Principal-value quadrature of the singular-integral form of (-Δ)^a.
//!
//! Slow and independent of the assembled matrix; meant as a reference.
//! The integral is folded onto the half line,
//!
//! ```text
//! C ∫_0^∞ (2u(x) - u(x+r) - u(x-r)) r^(-1-2a) dr
//! ```
//!
//! and split at the distances to the two boundary points. Near r = 0 the
//! substitution r = s^(1/(1-a)) removes the r^(1-2a) singularity; below a
//! tiny cutoff the second-order Taylor term is integrated in closed form
//! because the symmetric difference is pure round-off there.

use serde::{Deserialize, Serialize};

use crate::domain::Grid1D;
use crate::error::{Error, Result};
use crate::operator::{check_exponent, kernel_prefactor, FracOperator};
use crate::spectral::linear_fit;
use crate::quadrature::adaptive_gk;

const MAX_SEGMENTS: usize = 20_000;

/// C_{1,a} p.v.∫ (u(x) - u(y)) / |x - y|^(1+2a) dy for `u` vanishing outside
/// `(support.0, support.1)`, to absolute accuracy `tol`.
pub fn pv_reference_apply(
    u: impl Fn(f64) -> f64,
    support: (f64, f64),
    x: f64,
    a: f64,
    tol: f64,
) -> Result<f64> {
    check_exponent(a)?;
    let (lo, hi) = support;
    if !(lo < x && x < hi) {
        return Err(Error::InvalidArgument(format!("point {x} not inside ({lo}, {hi})")));
    }
    if tol <= 0.0 {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let c = kernel_prefactor(a);
    let ux = u(x);
    let d1 = (x - lo).min(hi - x);
    let d2 = (x - lo).max(hi - x);
    let sym = |r: f64| 2.0 * ux - u(x + r) - u(x - r);
    let tol_piece = tol / (3.0 * c);

    // [0, r0]: -u''(x) r^2 term only
    let r0 = 1e-4 * d1;
    let minus_second = sym(r0) / (r0 * r0);
    let near = minus_second * r0.powf(2.0 - 2.0 * a) / (2.0 - 2.0 * a);

    // [r0, d1] in s with r = s^p
    let p = 1.0 / (1.0 - a);
    let s0 = r0.powf(1.0 / p);
    let s1 = d1.powf(1.0 / p);
    let inner = adaptive_gk(
        |s| {
            let r = s.powf(p);
            sym(r) * r.powf(-1.0 - 2.0 * a) * p * s.powf(p - 1.0)
        },
        &[s0, s1],
        tol_piece,
        MAX_SEGMENTS,
    );

    // [d1, d2]: one of the shifted values has left the support
    let middle = if d2 > d1 {
        adaptive_gk(|r| sym(r) * r.powf(-1.0 - 2.0 * a), &[d1, d2], tol_piece, MAX_SEGMENTS)
    } else {
        crate::quadrature::Adaptive { value: 0.0, error: 0.0, converged: true }
    };

    let far = 2.0 * ux * d2.powf(-2.0 * a) / (2.0 * a);
    let estimate = c * (inner.error + middle.error);
    if !(inner.converged && middle.converged) || estimate > tol {
        return Err(Error::QuadratureNotConverged { tol, estimate });
    }
    Ok(c * (near + inner.value + middle.value + far))
}

/// Discrete operator against the quadrature reference on (R² - |x - x₀|²)^(a+1)
/// at the midpoint, on odd grids so the midpoint is a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyStudy {
    pub a: f64,
    pub sizes: Vec<usize>,
    pub reference: f64,
    pub errors: Vec<f64>,
    /// Least-squares slope of -log(error) against log(n).
    pub order: f64,
}

impl ConsistencyStudy {
    pub fn strictly_decreasing(&self) -> bool {
        self.errors.windows(2).all(|w| w[1] < w[0])
    }
}

pub fn consistency_study(a: f64, x_left: f64, x_right: f64, sizes: &[usize]) -> Result<ConsistencyStudy> {
    check_exponent(a)?;
    if sizes.len() < 2 {
        return Err(Error::InvalidArgument("need at least two grid sizes".into()));
    }
    if let Some(n) = sizes.iter().find(|n| *n % 2 == 0) {
        return Err(Error::InvalidArgument(format!("grid size {n} is even; the midpoint must be a node")));
    }
    let g0 = Grid1D::new(x_left, x_right, sizes[0])?;
    let (x0, r) = (g0.center(), g0.radius());
    let u = move |x: f64| {
        let s = r * r - (x - x0) * (x - x0);
        if s > 0.0 {
            s.powf(a + 1.0)
        } else {
            0.0
        }
    };
    let reference = pv_reference_apply(u, (x_left, x_right), x0, a, 1e-10)?;
    let mut errors = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let g = Grid1D::new(x_left, x_right, n)?;
        let op = FracOperator::free(a, &g)?;
        let v = g.sample(u);
        errors.push((op.apply_row(n / 2, &v) - reference).abs());
    }
    let xs: Vec<f64> = sizes.iter().map(|n| (*n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| -e.ln()).collect();
    let (order, _, _) = linear_fit(&xs, &ys);
    Ok(ConsistencyStudy { a, sizes: sizes.to_vec(), reference, errors, order })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::gamma;
    use std::f64::consts::PI;

    fn explicit_constant(a: f64) -> f64 {
        4f64.powf(a) * gamma(1.0 + a).unwrap() * gamma(0.5 + a).unwrap() / PI.sqrt()
    }

    #[test]
    fn zero_function() {
        let v = pv_reference_apply(|_| 0.0, (-1.0, 1.0), 0.3, 0.75, 1e-10).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn explicit_solution_is_constant() {
        let a = 0.6;
        let u = |y: f64| if y.abs() < 1.0 { (1.0 - y * y).powf(a) } else { 0.0 };
        let want = explicit_constant(a);
        assert!((want - 1.101_802_490_879_712_732_769_141_986_22).abs() < 1e-13);
        for k in 0..10 {
            let x = -0.9 + 0.19 * k as f64;
            let v = pv_reference_apply(u, (-1.0, 1.0), x, a, 1e-8).unwrap();
            assert!((v - want).abs() < 1e-6, "x = {x}: {v} vs {want}");
        }
    }

    #[test]
    fn even_function_at_center_equals_doubled_half_line() {
        let a = 0.75;
        let u = |y: f64| if y.abs() < 1.0 { (1.0 - y * y).powi(2) } else { 0.0 };
        let v = pv_reference_apply(u, (-1.0, 1.0), 0.0, a, 1e-10).unwrap();
        // 2 ∫_0^∞ (u(0) - u(r)) r^(-1-2a) dr in closed form: 1 - u = 2r² - r⁴ on [0, 1]
        let c = kernel_prefactor(a);
        let half = 2.0 / (2.0 - 2.0 * a) - 1.0 / (4.0 - 2.0 * a) + 1.0 / (2.0 * a);
        assert!((v - 2.0 * c * half).abs() < 1e-8, "{v} vs {}", 2.0 * c * half);
    }

    #[test]
    fn rejects_points_outside_and_bad_tolerance() {
        assert!(pv_reference_apply(|_| 1.0, (-1.0, 1.0), 1.0, 0.5, 1e-8).is_err());
        assert!(pv_reference_apply(|_| 1.0, (-1.0, 1.0), 0.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn unreachable_tolerance_is_reported() {
        let u = |y: f64| if y.abs() < 1.0 { (1.0 - y * y).powf(0.75) } else { 0.0 };
        let r = pv_reference_apply(u, (-1.0, 1.0), 0.2, 0.75, 1e-30);
        assert!(matches!(r, Err(Error::QuadratureNotConverged { .. })));
    }
}

//! Boundary traces u/d^p and numerical checks of the Pohozaev-type identities.
//!
//! Traces are extrapolated from the four nodes nearest each end: the ratios
//! `u_i / D_i` are fitted by a quadratic in the distance and evaluated at
//! zero. With [`TraceProfile::Continuum`] the denominator is `d_i^p`. Grid
//! functions produced by the lattice operator follow the discrete profile
//! `h^p Γ(i + p) / Γ(i)` (i = steps from the boundary) instead of `d^p`;
//! [`TraceProfile::Lattice`] divides by that profile, which removes the O(1)
//! boundary-layer bias of the plain ratio.

use serde::{Deserialize, Serialize};

use crate::domain::{Grid1D, Side};
use crate::error::{Error, Result};
use crate::operator::FracOperator;
use crate::spectral::EigenBasis;
use crate::special::{gamma_ratio, gamma_unchecked};

/// Number of nodes in the trace stencil.
pub const TRACE_STENCIL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceProfile {
    /// Divide by d^p; for functions sampled from a continuum formula.
    Continuum,
    /// Divide by h^p Γ(i + p) / Γ(i); for solutions of the lattice operator.
    Lattice,
}

/// Linear functional u ↦ trace, as weights on the stencil nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFunctional {
    pub indices: [usize; TRACE_STENCIL],
    pub weights: [f64; TRACE_STENCIL],
}

impl TraceFunctional {
    pub fn new(grid: &Grid1D, side: Side, power: f64, profile: TraceProfile) -> Result<Self> {
        if grid.n < 2 * TRACE_STENCIL {
            return Err(Error::InvalidGrid(format!(
                "trace stencil needs n >= {}, got {}",
                2 * TRACE_STENCIL,
                grid.n
            )));
        }
        let h = grid.h;
        let mut indices = [0usize; TRACE_STENCIL];
        let mut dist = [0.0; TRACE_STENCIL];
        let mut denom = [0.0; TRACE_STENCIL];
        for (slot, (k, steps)) in grid.nearest_nodes(side, TRACE_STENCIL).enumerate() {
            let d = steps as f64 * h;
            indices[slot] = k;
            dist[slot] = d;
            denom[slot] = match profile {
                TraceProfile::Continuum => d.powf(power),
                TraceProfile::Lattice => h.powf(power) * gamma_ratio(steps as f64, power),
            };
        }
        let alpha = quadratic_intercept_weights(&dist);
        let mut weights = [0.0; TRACE_STENCIL];
        for s in 0..TRACE_STENCIL {
            weights[s] = alpha[s] / denom[s];
        }
        Ok(Self { indices, weights })
    }

    pub fn apply(&self, u: &[f64]) -> f64 {
        self.indices.iter().zip(&self.weights).map(|(&k, w)| w * u[k]).sum()
    }
}

/// Weights α with c0 = Σ α_k y_k for the least-squares fit y ≈ c0 + c1 d + c2 d².
fn quadratic_intercept_weights(d: &[f64; TRACE_STENCIL]) -> [f64; TRACE_STENCIL] {
    // scale distances to O(1) for conditioning
    let s = d[TRACE_STENCIL - 1];
    let basis: Vec<[f64; 3]> = d.iter().map(|&x| [1.0, x / s, (x / s).powi(2)]).collect();
    let mut m = [[0.0; 3]; 3];
    for b in &basis {
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += b[i] * b[j];
            }
        }
    }
    let inv = invert3(&m);
    let mut out = [0.0; TRACE_STENCIL];
    for (k, b) in basis.iter().enumerate() {
        out[k] = (0..3).map(|j| inv[0][j] * b[j]).sum();
    }
    out
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
        }
    }
    inv
}

/// Extrapolated limit of u / d^power at the given side.
pub fn boundary_trace(
    grid: &Grid1D,
    u: &[f64],
    side: Side,
    power: f64,
    profile: TraceProfile,
) -> Result<f64> {
    grid.check_len(u)?;
    Ok(TraceFunctional::new(grid, side, power, profile)?.apply(u))
}

/// Outcome of an identity check, optionally across a refinement sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub tag: String,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub grid_sizes: Vec<usize>,
    pub residuals: Vec<f64>,
    /// log2 ratio of the last two residuals, when there are two.
    pub estimated_order: Option<f64>,
}

pub(crate) fn relative_residual(lhs: f64, rhs: f64) -> f64 {
    let diff = (lhs - rhs).abs();
    if diff == 0.0 {
        return 0.0;
    }
    let scale = lhs.abs().max(rhs.abs());
    diff / scale.max(1e-14 * scale).max(f64::MIN_POSITIVE)
}

impl IdentityReport {
    pub fn single(tag: impl Into<String>, n: usize, lhs: f64, rhs: f64) -> Self {
        let residual = relative_residual(lhs, rhs);
        Self {
            tag: tag.into(),
            lhs,
            rhs,
            residual,
            grid_sizes: vec![n],
            residuals: vec![residual],
            estimated_order: None,
        }
    }

    /// Combine single-grid reports (coarse to fine); lhs/rhs of the finest are kept.
    pub fn refinement(reports: &[IdentityReport]) -> Self {
        assert!(!reports.is_empty());
        let last = reports.last().unwrap();
        let grid_sizes: Vec<usize> = reports.iter().flat_map(|r| r.grid_sizes.clone()).collect();
        let residuals: Vec<f64> = reports.iter().flat_map(|r| r.residuals.clone()).collect();
        Self {
            tag: last.tag.clone(),
            lhs: last.lhs,
            rhs: last.rhs,
            residual: last.residual,
            estimated_order: estimate_order(&grid_sizes, &residuals),
            grid_sizes,
            residuals,
        }
    }

    pub fn monotone_decreasing(&self) -> bool {
        self.residuals.windows(2).all(|w| w[1] < w[0])
    }

    pub fn monotone_nonincreasing(&self) -> bool {
        self.residuals.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Observed order from the last two entries: log(r_prev / r_last) / log(n_last / n_prev).
pub fn estimate_order(grid_sizes: &[usize], residuals: &[f64]) -> Option<f64> {
    let k = residuals.len();
    if k < 2 || residuals[k - 1] <= 0.0 || residuals[k - 2] <= 0.0 {
        return None;
    }
    let ratio = grid_sizes[k - 1] as f64 / grid_sizes[k - 2] as f64;
    Some((residuals[k - 2] / residuals[k - 1]).ln() / ratio.ln())
}

/// Derivative with central differences inside and one-sided at the end nodes.
pub fn gradient(grid: &Grid1D, u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let h = grid.h;
    (0..n)
        .map(|i| {
            if i == 0 {
                (u[1] - u[0]) / h
            } else if i == n - 1 {
                (u[n - 1] - u[n - 2]) / h
            } else {
                (u[i + 1] - u[i - 1]) / (2.0 * h)
            }
        })
        .collect()
}

/// (x_σ - α)·ν_σ at the two ends.
fn boundary_weights(grid: &Grid1D, alpha: f64) -> [f64; 2] {
    Side::BOTH.map(|s| (grid.boundary_point(s) - alpha) * s.normal())
}

/// Γ(1 + a)² / 2.
pub fn pohozaev_constant(a: f64) -> f64 {
    let g = gamma_unchecked(1.0 + a);
    0.5 * g * g
}

/// Pohozaev identity with the multiplier centred at `alpha`:
///
/// ⟨(x-α) u', (-Δ)^a u⟩ = (2a - 1)/2 ⟨u, (-Δ)^a u⟩ - Γ(1+a)²/2 Σ_σ ψ_σ² (x_σ-α)·ν_σ
///
/// `au` is the full operator applied to `u`; the potential part is removed
/// before pairing. Traces use the lattice profile.
pub fn pohozaev_alpha_check(
    op: &FracOperator,
    u: &[f64],
    au: &[f64],
    alpha: f64,
    tag: &str,
) -> Result<IdentityReport> {
    let grid = &op.grid;
    grid.check_len(u)?;
    grid.check_len(au)?;
    let a = op.a;
    let frac: Vec<f64> = au.iter().zip(&op.q.values).zip(u).map(|((v, q), x)| v - q * x).collect();
    let du = gradient(grid, u);
    let mult: Vec<f64> = grid.nodes.iter().zip(&du).map(|(x, d)| (x - alpha) * d).collect();
    let lhs = grid.inner(&mult, &frac);
    let weights = boundary_weights(grid, alpha);
    let mut boundary = 0.0;
    for side in Side::BOTH {
        let t = boundary_trace(grid, u, side, a, TraceProfile::Lattice)?;
        boundary += t * t * weights[side.index()];
    }
    let rhs = 0.5 * (2.0 * a - 1.0) * grid.inner(u, &frac) - pohozaev_constant(a) * boundary;
    Ok(IdentityReport::single(tag, grid.n, lhs, rhs))
}

pub fn pohozaev_check(op: &FracOperator, u: &[f64], au: &[f64], tag: &str) -> Result<IdentityReport> {
    pohozaev_alpha_check(op, u, au, 0.0, tag)
}

/// a λ ‖φ‖² against Γ(1+a)²/2 Σ_σ ψ_σ² (x_σ·ν_σ) for eigenpair `k` (0-based).
pub fn eigen_relation(basis: &EigenBasis, k: usize) -> IdentityReport {
    let a = basis.a;
    let phi = basis.mode(k);
    let norm2 = basis.grid.inner(phi, phi);
    let weights = boundary_weights(&basis.grid, 0.0);
    let t = basis.traces[k];
    let lhs = a * basis.lambdas[k] * norm2;
    let rhs = pohozaev_constant(a) * (t[0] * t[0] * weights[0] + t[1] * t[1] * weights[1]);
    IdentityReport::single(format!("eigen-relation-{}", k + 1), basis.grid.n, lhs, rhs)
}

/// |⟨w2, A w1⟩_h - ⟨w1, A w2⟩_h|, relative to ‖w1‖‖w2‖‖A‖-free scale.
pub fn ibp_symmetric_check(op: &FracOperator, w1: &[f64], w2: &[f64]) -> Result<IdentityReport> {
    let grid = &op.grid;
    grid.check_len(w1)?;
    grid.check_len(w2)?;
    let lhs = grid.inner(w2, &op.apply(w1));
    let rhs = grid.inner(w1, &op.apply(w2));
    let mut report = IdentityReport::single("ibp-symmetric", grid.n, lhs, rhs);
    report.residual = (lhs - rhs).abs();
    report.residuals = vec![report.residual];
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopfReport {
    pub modes_checked: usize,
    pub tol: f64,
    /// (mode, side) pairs with |ψ| ≤ tol, 1-based modes.
    pub violations: Vec<(usize, Side)>,
    pub min_abs_trace: f64,
    pub argmin: (usize, Side),
}

impl HopfReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Flags eigenfunctions whose trace φ/d^a vanishes (to `tol`) at an endpoint.
pub fn hopf_check(basis: &EigenBasis, n_max: usize, tol: f64) -> Result<HopfReport> {
    let n = basis.grid.n;
    if n_max == 0 || n_max > n / 8 {
        return Err(Error::InvalidArgument(format!(
            "n_max = {n_max} must lie in 1..={} (well-resolved modes only)",
            n / 8
        )));
    }
    let mut violations = Vec::new();
    let mut min_abs = f64::INFINITY;
    let mut argmin = (1, Side::Left);
    for k in 0..n_max {
        for side in Side::BOTH {
            let v = basis.traces[k][side.index()].abs();
            if v <= tol {
                violations.push((k + 1, side));
            }
            if v < min_abs {
                min_abs = v;
                argmin = (k + 1, side);
            }
        }
    }
    Ok(HopfReport { modes_checked: n_max, tol, violations, min_abs_trace: min_abs, argmin })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::make_grid;

    #[test]
    fn exact_power_has_unit_trace() {
        let a = 0.75;
        let g = make_grid(-1.0, 1.0, 64).unwrap();
        let u: Vec<f64> = g.distances().iter().map(|d| d.powf(a)).collect();
        for side in Side::BOTH {
            let t = boundary_trace(&g, &u, side, a, TraceProfile::Continuum).unwrap();
            assert!((t - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn faster_decay_has_zero_trace() {
        let a = 0.75;
        let g = make_grid(-1.0, 1.0, 64).unwrap();
        let u: Vec<f64> = g.distances().iter().map(|d| d.powf(a + 1.0)).collect();
        for side in Side::BOTH {
            let t = boundary_trace(&g, &u, side, a, TraceProfile::Continuum).unwrap();
            assert!(t.abs() < 1e-12);
        }
    }

    #[test]
    fn explicit_profile_trace_converges_to_two_to_the_a() {
        let a = 0.75;
        let want = 2f64.powf(a);
        let mut errs = vec![];
        for n in [256usize, 512, 1024] {
            let g = make_grid(-1.0, 1.0, n).unwrap();
            let u = g.sample(|x| (1.0 - x * x).powf(a));
            let l = boundary_trace(&g, &u, Side::Left, a, TraceProfile::Continuum).unwrap();
            let r = boundary_trace(&g, &u, Side::Right, a, TraceProfile::Continuum).unwrap();
            assert!((l - r).abs() < 1e-12);
            errs.push((l - want).abs());
        }
        assert!(errs[2] < 1e-6);
        assert!(errs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn linear_correction_is_fitted_exactly() {
        let a = 0.6;
        let g = make_grid(-1.0, 1.0, 128).unwrap();
        let u: Vec<f64> = g.distances().iter().map(|d| d.powf(a) * (1.0 + d)).collect();
        let t = boundary_trace(&g, &u, Side::Left, a, TraceProfile::Continuum).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn extrapolation_order_for_smooth_correction() {
        let a = 0.75;
        let mut errs = vec![];
        let ns = [128usize, 256, 512, 1024];
        for n in ns {
            let g = make_grid(-1.0, 1.0, n).unwrap();
            let u: Vec<f64> = g.distances().iter().map(|d| d.powf(a) * d.exp()).collect();
            let l = boundary_trace(&g, &u, Side::Left, a, TraceProfile::Continuum).unwrap();
            let r = boundary_trace(&g, &u, Side::Right, a, TraceProfile::Continuum).unwrap();
            errs.push((l - 1.0).abs().max((r - 1.0).abs()));
        }
        for w in 1..ns.len() {
            let order = (errs[w - 1] / errs[w]).log2();
            assert!(order >= 1.5, "order {order} at n = {}", ns[w]);
        }
    }

    #[test]
    fn lattice_profile_is_exact_for_gamma_ratio_samples() {
        let a = 0.75;
        let g = make_grid(-1.0, 1.0, 50).unwrap();
        let u: Vec<f64> = (0..50)
            .map(|k| {
                let steps = (k + 1).min(50 - k) as f64;
                g.h.powf(a) * gamma_ratio(steps, a)
            })
            .collect();
        let t = boundary_trace(&g, &u, Side::Right, a, TraceProfile::Lattice).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stencil_needs_eight_nodes() {
        let g = make_grid(-1.0, 1.0, 7).unwrap();
        let u = vec![1.0; 7];
        assert!(boundary_trace(&g, &u, Side::Left, 0.5, TraceProfile::Continuum).is_err());
    }

    #[test]
    fn residual_floor() {
        assert_eq!(relative_residual(0.0, 0.0), 0.0);
        assert!((relative_residual(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}

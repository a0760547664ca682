//! Approximate controls by the penalized quadratic functionals and the
//! boundary observability constant on finite spectral subspaces.
//!
//! Both controllers reduce to minimizing ½ cᵀ M c + ε‖c‖ − gᵀc for an explicit
//! positive semidefinite M. Optimality gives (M + μ I) c = g with μ‖c‖ = ε, so
//! in the eigenbasis of M every coefficient is shrunk by e_k / (e_k + μ) and
//! the scalar μ is found by bisection on log μ.

use serde::{Deserialize, Serialize};

use crate::domain::Side;
use crate::error::{Error, Result};
use crate::heat::{kappa, phi0, singular_boundary_coeffs, BoundarySignal};
use crate::operator::{check_parabolic_exponent, PotentialSpec};
use crate::quadrature::GaussLegendre;
use crate::spectral::{symmetric_eigen, EigenBasis, ThetaBound};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    /// Horizon T̃.
    pub t_final: f64,
    pub epsilon: f64,
    /// T₁: the cutoff η ramps from 0 to 1 on [T₁/2, T₁].
    pub eta_ramp: f64,
    /// Relative tolerance on μ‖c(μ)‖ = ε.
    pub mu_bisect_tol: f64,
    pub max_iters: usize,
    /// Retained modes for boundary control; default all. With fewer modes the
    /// action of F on the dropped ones is not modeled.
    pub modes: Option<usize>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self { t_final: 1.0, epsilon: 0.01, eta_ramp: 0.25, mu_bisect_tol: 1e-12, max_iters: 400, modes: None }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad(format!("T must be positive, got {}", self.t_final));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("eps must be positive, got {}", self.epsilon));
        }
        if !(self.eta_ramp > 0.0 && self.eta_ramp < self.t_final) {
            return bad(format!("t1 must lie in (0, T), got {}", self.eta_ramp));
        }
        if !(self.mu_bisect_tol > 0.0) || self.max_iters == 0 {
            return bad("bisection tolerance and iteration cap must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlResult {
    /// Eigen-coefficients of f (initial control) or of the adjoint seed (boundary control).
    pub control_coeffs: Vec<f64>,
    /// Nodal values of f; empty for boundary control.
    pub control: Vec<f64>,
    pub boundary_signal: Option<BoundarySignal>,
    pub mu: f64,
    /// ln μ (μ itself can leave the range of f64).
    pub log_mu: f64,
    /// ‖u(T̃) − h‖_h from an independent forward solve.
    pub achieved_error: f64,
    /// μ‖c‖ as predicted by the optimality system.
    pub model_error: f64,
    pub target_norm: f64,
    pub iterations: usize,
    pub modes: usize,
    /// Boundary control: relative gap between the Gram model and the transposition solver.
    pub consistency: Option<f64>,
}

/// Shrinkage factor μ / (e + μ) = 1 / (1 + e^{ln e − ν}).
fn residual_factor(log_e: f64, nu: f64) -> f64 {
    1.0 / (1.0 + (log_e - nu).exp())
}

fn shrunk_norm(log_e: &[f64], g: &[f64], nu: f64) -> f64 {
    log_e.iter().zip(g).map(|(le, gk)| (gk * residual_factor(*le, nu)).powi(2)).sum::<f64>().sqrt()
}

/// Solve ‖(μ / (e + μ)) g‖ = ε for ν = ln μ by bisection; returns (ν, iterations).
pub(crate) fn solve_multiplier(log_e: &[f64], g: &[f64], eps: f64, tol: f64, max_iters: usize) -> Result<(f64, usize)> {
    let f = |nu: f64| shrunk_norm(log_e, g, nu) - eps;
    let mut iters = 0;
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    let mut step = 8.0;
    while f(hi) <= 0.0 {
        hi += step;
        step *= 2.0;
        iters += 1;
        if iters > max_iters || !hi.is_finite() {
            return Err(Error::BisectionFailed(iters));
        }
    }
    step = 8.0;
    while f(lo) >= 0.0 {
        lo -= step;
        step *= 2.0;
        iters += 1;
        // the limit ν → −∞ is the part of g with e = 0, which cannot be shrunk
        if iters > max_iters || lo < -1e6 {
            return Err(Error::BisectionFailed(iters));
        }
    }
    loop {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        iters += 1;
        if v.abs() <= tol * eps {
            return Ok((mid, iters));
        }
        if mid <= lo || mid >= hi {
            return Err(Error::BisectionFailed(iters));
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if iters >= max_iters {
            return Err(Error::BisectionFailed(iters));
        }
    }
}

fn zero_result(n_coeffs: usize, n_nodes: usize, target_norm: f64, modes: usize, boundary: Option<BoundarySignal>) -> ControlResult {
    ControlResult {
        control_coeffs: vec![0.0; n_coeffs],
        control: if boundary.is_some() { Vec::new() } else { vec![0.0; n_nodes] },
        boundary_signal: boundary,
        mu: 0.0,
        log_mu: f64::NEG_INFINITY,
        achieved_error: target_norm,
        model_error: target_norm,
        target_norm,
        iterations: 0,
        modes,
        consistency: None,
    }
}

/// Initial-data control with ‖u_f(T̃) − h‖_h = ε.
pub fn control_initial(basis: &EigenBasis, h: &[f64], cfg: &ControlConfig) -> Result<ControlResult> {
    check_parabolic_exponent(basis.a)?;
    cfg.validate()?;
    basis.grid.check_len(h)?;
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("target has non-finite entries".into()));
    }
    let n = basis.n();
    let t = cfg.t_final;
    let target_norm = basis.grid.norm(h);
    if target_norm <= cfg.epsilon {
        return Ok(zero_result(n, n, target_norm, n, None));
    }
    let g = basis.coefficients(h)?;
    let log_e: Vec<f64> = basis.lambdas.iter().map(|l| -2.0 * l * t).collect();
    let (nu, iterations) = solve_multiplier(&log_e, &g, cfg.epsilon, cfg.mu_bisect_tol, cfg.max_iters)?;
    // f_k = e^{-λT} g_k / (e^{-2λT} + μ) = g_k r_k e^{-λT - ν}
    let mut f = Vec::with_capacity(n);
    for k in 0..n {
        let expo = -basis.lambdas[k] * t - nu;
        let r = residual_factor(log_e[k], nu);
        let v = if g[k] == 0.0 || r == 0.0 { 0.0 } else { g[k] * r * expo.exp() };
        if !v.is_finite() {
            return Err(Error::Unrepresentable(format!(
                "control coefficient of mode {} needs e^{expo:.1}",
                k + 1
            )));
        }
        f.push(v);
    }
    let model_error = shrunk_norm(&log_e, &g, nu);
    // forward solve in the coefficient representation: u(T̃)_k = e^{-λ_k T̃} f_k
    let ut: Vec<f64> = f.iter().zip(&basis.lambdas).map(|(fk, l)| fk * (-l * t).exp()).collect();
    let u = basis.synthesize(&ut);
    let diff: Vec<f64> = u.iter().zip(h).map(|(a, b)| a - b).collect();
    let achieved_error = basis.grid.norm(&diff);
    Ok(ControlResult {
        control: basis.synthesize(&f),
        control_coeffs: f,
        boundary_signal: None,
        mu: nu.exp(),
        log_mu: nu,
        achieved_error,
        model_error,
        target_norm,
        iterations,
        modes: n,
        consistency: None,
    })
}

/// Cubic ramp η on [T₁/2, T₁].
pub fn eta(t: f64, t1: f64) -> f64 {
    let s = (t - 0.5 * t1) / (0.5 * t1);
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        s * s * (3.0 - 2.0 * s)
    }
}

/// ∫₀^T̃ η²(t) e^{-Λ(T̃ - t)} dt: Gauss–Legendre on the ramp, closed form after it.
pub(crate) fn eta_exp_integral(gl: &GaussLegendre, lam_sum: f64, t_final: f64, t1: f64) -> f64 {
    let ramp = gl.integrate(0.5 * t1, t1, |t| {
        let e = eta(t, t1);
        e * e * (-lam_sum * (t_final - t)).exp()
    });
    let tail_len = t_final - t1;
    ramp + tail_len * phi0(lam_sum * tail_len)
}

/// Boundary Gram matrix G_nm = Σ_σ w_σ ψ_n^σ ψ_m^σ ∫ η² e^{-(λ_n+λ_m)(T̃-t)} dt on the first `modes` modes.
pub fn boundary_gram(basis: &EigenBasis, modes: usize, weights: [f64; 2], integral: impl Fn(f64) -> f64) -> Result<Vec<Vec<f64>>> {
    let m = modes.min(basis.n());
    for k in 0..m {
        if !(basis.traces[k][0].is_finite() && basis.traces[k][1].is_finite()) {
            return Err(Error::NonFiniteTraces);
        }
    }
    let mut g = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..=i {
            let (pi, pj) = (basis.traces[i], basis.traces[j]);
            let tr = weights[0] * pi[0] * pj[0] + weights[1] * pi[1] * pj[1];
            let v = tr * integral(basis.lambdas[i] + basis.lambdas[j]);
            g[i][j] = v;
            g[j][i] = v;
        }
    }
    Ok(g)
}

/// Knots for sampling the boundary control: zero up to T₁/2, then spacing
/// γ·max(T̃ − t, 1/λ_max) toward T̃, never wider than `max_step`.
pub(crate) fn control_knots(t_final: f64, t1: f64, lambda_max: f64, gamma: f64, max_step: f64) -> Vec<f64> {
    let start = 0.5 * t1;
    let span = t_final - start;
    let floor = 1.0 / lambda_max.max(1.0);
    let mut taus = vec![0.0];
    let mut tau = 0.0f64;
    loop {
        tau += (gamma * tau.max(floor)).min(max_step);
        if tau >= span * (1.0 - 1e-12) {
            break;
        }
        taus.push(tau);
    }
    let mut out = vec![0.0];
    out.push(start);
    out.extend(taus.iter().rev().map(|tau| t_final - tau));
    out
}

/// Smallest usable μ relative to the largest Gram eigenvalue.
const MU_FLOOR: f64 = 1e-13;

fn unreachable_error(eps: f64) -> Error {
    Error::Unrepresentable(format!("no multiplier reaches eps = {eps}: the target is outside the numerically reachable set"))
}

/// Grading and maximal step of the emitted boundary signal.
const KNOT_GAMMA: f64 = 5e-4;
const KNOT_MAX_STEP_FRACTION: f64 = 2e-4;

/// Boundary control F = κ η² u_{F*}/d^a with ‖u_F(T̃) − h‖_h ≤ ε.
pub fn control_boundary(basis: &EigenBasis, h: &[f64], cfg: &ControlConfig) -> Result<ControlResult> {
    check_parabolic_exponent(basis.a)?;
    cfg.validate()?;
    basis.grid.check_len(h)?;
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("target has non-finite entries".into()));
    }
    let grid = &basis.grid;
    let q = PotentialSpec::new(grid, basis.q.clone())?;
    ThetaBound::for_grid(basis.a, grid)?.check_max(&q)?;
    let n = basis.n();
    let j = cfg.modes.unwrap_or(n).clamp(1, n);
    let (t, t1) = (cfg.t_final, cfg.eta_ramp);
    let target_norm = grid.norm(h);
    if target_norm <= cfg.epsilon {
        let zero = BoundarySignal::zero(t)?;
        return Ok(zero_result(j, n, target_norm, j, Some(zero)));
    }
    let kap = kappa(basis.a);
    let gl = GaussLegendre::new(32);
    let gram = boundary_gram(basis, j, [1.0, 1.0], |l| eta_exp_integral(&gl, l, t, t1))?;
    let gmat = faer::Mat::from_fn(j, j, |a, b| kap * kap * gram[a][b]);
    let (evals, evecs) = symmetric_eigen(&gmat)?;
    let hc = basis.coefficients_truncated(h, j)?;
    // target in the eigenbasis of κ²G, plus the part of h outside the retained modes
    let mut g: Vec<f64> = evecs.iter().map(|v| v.iter().zip(&hc).map(|(a, b)| a * b).sum()).collect();
    let mut log_e: Vec<f64> = evals.iter().map(|e| if *e > 0.0 { e.ln() } else { f64::NEG_INFINITY }).collect();
    let tail = (target_norm * target_norm - hc.iter().map(|c| c * c).sum::<f64>()).max(0.0).sqrt();
    g.push(tail);
    log_e.push(f64::NEG_INFINITY);
    let (nu, iterations) = solve_multiplier(&log_e, &g, cfg.epsilon, cfg.mu_bisect_tol, cfg.max_iters)
        .map_err(|_| unreachable_error(cfg.epsilon))?;
    // rounding in κ²G is amplified by 1/μ in the seed
    let e_max = evals.last().copied().unwrap_or(0.0);
    if nu < (MU_FLOOR * e_max).ln() {
        return Err(Error::Unrepresentable(format!(
            "multiplier mu = {:.3e} is below the rounding level {:.3e} of the Gram matrix",
            nu.exp(),
            MU_FLOOR * e_max
        )));
    }
    let model_error = shrunk_norm(&log_e, &g, nu);
    // c = Σ_k v_k g_k / (e_k + μ)
    let mut c = vec![0.0; j];
    for k in 0..j {
        let w = g[k] * residual_factor(log_e[k], nu) * (-nu).exp();
        if !w.is_finite() {
            return Err(Error::Unrepresentable(format!("adjoint seed needs e^{:.1}", -nu)));
        }
        for (ci, vi) in c.iter_mut().zip(&evecs[k]) {
            *ci += w * vi;
        }
    }
    let lam_max = 2.0 * basis.lambdas[j - 1];
    let knots = control_knots(t, t1, lam_max, KNOT_GAMMA, KNOT_MAX_STEP_FRACTION * t);
    let values = knots
        .iter()
        .map(|&s| {
            let e2 = eta(s, t1).powi(2);
            if e2 == 0.0 {
                return [0.0; 2];
            }
            let mut acc = [0.0; 2];
            // eigenvalues ascend, so the exponentials underflow from some mode on
            for ((cm, l), tr) in c.iter().zip(&basis.lambdas).zip(&basis.traces) {
                let arg = -l * (t - s);
                if arg < -745.0 {
                    break;
                }
                let w = cm * arg.exp();
                acc[0] += w * tr[0];
                acc[1] += w * tr[1];
            }
            [kap * e2 * acc[0], kap * e2 * acc[1]]
        })
        .collect();
    let signal = BoundarySignal::new(knots, values)?;
    let coeffs = singular_boundary_coeffs(basis, &signal, t, n)?;
    let u = basis.synthesize(&coeffs);
    let diff: Vec<f64> = u.iter().zip(h).map(|(a, b)| a - b).collect();
    let achieved_error = grid.norm(&diff);
    // κ²Gc against the solver's first j coefficients
    let model: Vec<f64> = (0..j).map(|a| (0..j).map(|b| kap * kap * gram[a][b] * c[b]).sum()).collect();
    let gap: f64 = model.iter().zip(&coeffs).map(|(m, s)| (m - s).powi(2)).sum::<f64>().sqrt();
    let scale = model.iter().map(|m| m * m).sum::<f64>().sqrt();
    Ok(ControlResult {
        control_coeffs: c,
        control: Vec::new(),
        boundary_signal: Some(signal),
        mu: nu.exp(),
        log_mu: nu,
        achieved_error,
        model_error,
        target_norm,
        iterations,
        modes: j,
        consistency: Some(if scale > 0.0 { gap / scale } else { 0.0 }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityEstimate {
    pub modes: usize,
    pub t_final: f64,
    /// 𝒜(J): largest generalized eigenvalue of (D, G₀).
    pub constant: f64,
    /// Whether G₀ needed the 1e-14·trace regularization.
    pub regularized: bool,
}

/// G₀ on the first `modes` modes: η ≡ 1 and the boundary weight (x·ν).
pub fn observability_gram(basis: &EigenBasis, t_final: f64, modes: usize) -> Result<Vec<Vec<f64>>> {
    let g = &basis.grid;
    let w = Side::BOTH.map(|s| g.boundary_point(s) * s.normal());
    boundary_gram(basis, modes, w, |l| t_final * phi0(l * t_final))
}

/// Best constant 𝒜(J) with ‖u(0)‖²_h ≤ 𝒜 ∫₀^T Σ_σ (u/d^a)² (x·ν) dt on span{φ₁..φ_J}.
pub fn observability_constant(basis: &EigenBasis, t_final: f64, modes: usize) -> Result<ObservabilityEstimate> {
    let n = basis.n();
    if modes == 0 || modes > n / 4 {
        return Err(Error::InvalidArgument(format!("J = {modes} must lie in 1..={}", n / 4)));
    }
    if !(t_final > 0.0) {
        return Err(Error::InvalidArgument(format!("T must be positive, got {t_final}")));
    }
    let grid = &basis.grid;
    let q = PotentialSpec::new(grid, basis.q.clone())?;
    ThetaBound::for_grid(basis.a, grid)?.check_max(&q)?;
    let g0 = observability_gram(basis, t_final, modes)?;
    let d: Vec<f64> = basis.lambdas[..modes].iter().map(|l| (-2.0 * l * t_final).exp()).collect();
    let s: Vec<f64> = (0..modes)
        .map(|k| {
            let v = g0[k][k];
            if v > 0.0 {
                Ok(1.0 / v.sqrt())
            } else {
                Err(Error::NotPositiveDefinite(format!("G0 diagonal entry {k} is {v}")))
            }
        })
        .collect::<Result<_>>()?;
    let gs = faer::Mat::from_fn(modes, modes, |i, j| s[i] * g0[i][j] * s[j]);
    let (ev, vecs) = symmetric_eigen(&gs)?;
    let floor = 1e-14 * modes as f64;
    let regularized = ev[0] <= floor;
    let ev: Vec<f64> = ev.iter().map(|e| e.max(floor)).collect();
    // M = Λ^{-1/2} Vᵀ (S D S) V Λ^{-1/2}
    let m = faer::Mat::from_fn(modes, modes, |a, b| {
        let dot: f64 = (0..modes).map(|k| vecs[a][k] * vecs[b][k] * s[k] * s[k] * d[k]).sum();
        dot / (ev[a] * ev[b]).sqrt()
    });
    let (mev, _) = symmetric_eigen(&m)?;
    Ok(ObservabilityEstimate { modes, t_final, constant: *mev.last().unwrap(), regularized })
}

/// Outcome of testing the certified inequality on seeded random adjoint data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilitySamples {
    pub samples: usize,
    pub violations: usize,
    /// min over samples of (𝒜·Q − ‖u(0)‖²) / ‖u(0)‖².
    pub min_slack: f64,
}

/// Draw c ~ U(−1, 1)^J and compare ‖u(0)‖²_h = Σ e^{−2λT} c² with 𝒜 times the
/// boundary integral, the latter from adaptive time quadrature of the traces.
pub fn observability_samples(basis: &EigenBasis, est: &ObservabilityEstimate, samples: usize, seed: u64) -> Result<ObservabilitySamples> {
    use rand::{Rng, SeedableRng};
    let (j, t) = (est.modes, est.t_final);
    let g = &basis.grid;
    let w = Side::BOTH.map(|s| g.boundary_point(s) * s.normal());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    for _ in 0..samples {
        let c: Vec<f64> = (0..j).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm0: f64 = c.iter().zip(&basis.lambdas).map(|(ck, l)| ck * ck * (-2.0 * l * t).exp()).sum();
        let integrand = |s: f64| {
            let ct: Vec<f64> = c.iter().zip(&basis.lambdas).map(|(ck, l)| ck * (-l * (t - s)).exp()).collect();
            Side::BOTH.iter().map(|&sd| basis.trace_of_coeffs(&ct, sd).powi(2) * w[sd.index()]).sum::<f64>()
        };
        let scale = integrand(t).abs().max(f64::MIN_POSITIVE);
        let q = crate::quadrature::adaptive_gk(integrand, &[0.0, 0.5 * t, 0.9 * t, t], 1e-14 * scale, 4000).value;
        let slack = (est.constant * q - norm0) / norm0;
        if slack < -1e-10 {
            violations += 1;
        }
        min_slack = min_slack.min(slack);
    }
    Ok(ObservabilitySamples { samples, violations, min_slack })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::make_grid;
    use crate::operator::FracOperator;
    use crate::spectral::eigendecompose;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis(a: f64, n: usize) -> EigenBasis {
        let g = make_grid(-1.0, 1.0, n).unwrap();
        eigendecompose(&FracOperator::free(a, &g).unwrap()).unwrap()
    }

    #[test]
    fn small_target_gives_zero_control() {
        let b = basis(0.75, 64);
        let h: Vec<f64> = b.phi[0].iter().map(|v| 0.005 * v).collect();
        let r = control_initial(&b, &h, &ControlConfig::default()).unwrap();
        assert_eq!(r.mu, 0.0);
        assert!(r.control.iter().all(|v| *v == 0.0));
        assert!((r.achieved_error - 0.005).abs() < 1e-12);
    }

    #[test]
    fn single_mode_closed_form() {
        let b = basis(0.75, 64);
        let (h1, eps, t) = (0.8, 0.05, 1.0);
        let h: Vec<f64> = b.phi[0].iter().map(|v| h1 * v).collect();
        let cfg = ControlConfig { epsilon: eps, t_final: t, ..Default::default() };
        let r = control_initial(&b, &h, &cfg).unwrap();
        let mu = eps * (-2.0 * b.lambdas[0] * t).exp() / (h1 - eps);
        assert!((r.mu / mu - 1.0).abs() < 1e-9, "{} vs {mu}", r.mu);
        assert!((r.achieved_error / eps - 1.0).abs() < 1e-9);
    }

    #[test]
    fn generic_target_hits_eps() {
        let b = basis(0.75, 256);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = b.synthesize(&c);
        let cfg = ControlConfig { epsilon: 0.01, ..Default::default() };
        let r = control_initial(&b, &h, &cfg).unwrap();
        assert!((r.achieved_error / 0.01 - 1.0).abs() < 1e-6, "{}", r.achieved_error);
    }

    #[test]
    fn multiplier_map_is_increasing() {
        let log_e = [-1.0, -5.0, -20.0, -80.0];
        let g = [0.3, -0.2, 0.5, 0.1];
        let mut prev = 0.0;
        for k in -200..40 {
            let v = shrunk_norm(&log_e, &g, k as f64);
            assert!(v >= prev);
            prev = v;
        }
        let full = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((prev - full).abs() < 1e-12);
        assert!(solve_multiplier(&log_e, &g, full * 1.01, 1e-12, 400).is_err());
    }

    #[test]
    fn eta_ramp_shape() {
        assert_eq!(eta(0.1, 0.25), 0.0);
        assert_eq!(eta(0.25, 0.25), 1.0);
        assert!((eta(0.1875, 0.25) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gram_integral_against_fine_quadrature() {
        let gl = GaussLegendre::new(32);
        for lam in [0.5, 10.0, 300.0] {
            let got = eta_exp_integral(&gl, lam, 1.0, 0.25);
            let fine = GaussLegendre::new(64);
            let mut want = 0.0;
            let edges: Vec<f64> = (0..=400).map(|i| 0.125 + 0.875 * i as f64 / 400.0).collect();
            for w in edges.windows(2) {
                want += fine.integrate(w[0], w[1], |t| eta(t, 0.25).powi(2) * (-lam * (1.0 - t)).exp());
            }
            assert!((got - want).abs() < 1e-12 * want, "lam = {lam}");
        }
    }

    #[test]
    fn observability_single_mode_closed_form() {
        let b = basis(0.75, 64);
        let est = observability_constant(&b, 1.0, 1).unwrap();
        let g0 = observability_gram(&b, 1.0, 1).unwrap();
        let want = (-2.0 * b.lambdas[0]).exp() / g0[0][0];
        assert!((est.constant / want - 1.0).abs() < 1e-12);
        assert!(observability_constant(&b, 1.0, 17).is_err());
    }

    #[test]
    fn observability_monotone_in_modes() {
        let b = basis(0.75, 128);
        let mut prev = 0.0;
        for j in [1, 2, 4, 8, 16] {
            let c = observability_constant(&b, 1.0, j).unwrap().constant;
            assert!(c >= prev * (1.0 - 1e-10));
            prev = c;
        }
    }
}

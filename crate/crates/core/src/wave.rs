//! Finite-Fourier solutions of the fractional wave equation p_tt + A p = 0,
//! energy, equipartition, the multiplier identity and the boundary
//! observability constant with its T₀(J) scaling.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::Side;
use crate::error::{Error, Result};
use crate::operator::FracOperator;
use crate::quadrature::GaussLegendre;
use crate::spectral::{linear_fit, EigenBasis, ThetaBound};
use crate::traces::{gradient, pohozaev_constant, IdentityReport};

/// p(x, t) = Σ_{j ≤ J} p_j(t) φ_j(x) with p_j(0) = a_j, p_j'(0) = b_j.
#[derive(Debug, Clone)]
pub struct WaveState {
    pub op: Arc<FracOperator>,
    pub basis: Arc<EigenBasis>,
    pub a_coeffs: Vec<f64>,
    pub b_coeffs: Vec<f64>,
}

impl WaveState {
    pub fn new(op: Arc<FracOperator>, basis: Arc<EigenBasis>, a_coeffs: Vec<f64>, b_coeffs: Vec<f64>) -> Result<Self> {
        let j = a_coeffs.len();
        if b_coeffs.len() != j {
            return Err(Error::DimensionMismatch { expected: j, got: b_coeffs.len() });
        }
        if op.n() != basis.n() {
            return Err(Error::DimensionMismatch { expected: op.n(), got: basis.n() });
        }
        if j == 0 || j > basis.n() / 4 {
            return Err(Error::InvalidArgument(format!("J = {j} must lie in 1..={}", basis.n() / 4)));
        }
        if basis.lambdas[..j].iter().any(|l| *l <= 0.0) {
            return Err(Error::InvalidArgument("retained eigenvalues must be positive".into()));
        }
        Ok(Self { op, basis, a_coeffs, b_coeffs })
    }

    /// Seeded data: a_j uniform in (-1, 1), b_j = √λ_j times uniform in (-1, 1).
    pub fn random(op: Arc<FracOperator>, basis: Arc<EigenBasis>, j: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = random_data(&basis, j, &mut rng);
        Self::new(op, basis, a, b)
    }

    pub fn modes(&self) -> usize {
        self.a_coeffs.len()
    }

    /// Modal (p_j(t), p_j'(t)).
    pub fn modal(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let mut p = Vec::with_capacity(self.modes());
        let mut pt = Vec::with_capacity(self.modes());
        for ((a, b), l) in self.a_coeffs.iter().zip(&self.b_coeffs).zip(&self.basis.lambdas) {
            let w = l.sqrt();
            let (s, c) = (w * t).sin_cos();
            p.push(a * c + b * s / w);
            pt.push(-a * w * s + b * c);
        }
        (p, pt)
    }
}

fn random_data(basis: &EigenBasis, j: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let a: Vec<f64> = (0..j).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..j).map(|k| basis.lambdas[k].sqrt() * rng.random_range(-1.0..1.0)).collect();
    (a, b)
}

/// Nodal (p, p_t) at time t; the trigonometric solution is exact for any real t.
pub fn wave_solve(w: &WaveState, t: f64) -> (Vec<f64>, Vec<f64>) {
    let (p, pt) = w.modal(t);
    (w.basis.synthesize(&p), w.basis.synthesize(&pt))
}

/// Nodal quantities of one time slice.
struct Slice {
    pt_sq: f64,
    pa0p: f64,
    qpp: f64,
    xqpp: f64,
    pt_p: f64,
    xi: f64,
    bnd: f64,
    trace_sq: [f64; 2],
}

fn slice(w: &WaveState, t: f64) -> Slice {
    let op = &w.op;
    let g = &op.grid;
    let a = op.a;
    let (pm, ptm) = w.modal(t);
    let p = w.basis.synthesize(&pm);
    let pt = w.basis.synthesize(&ptm);
    let a0p = op.apply_fractional(&p);
    let qp: Vec<f64> = op.q.values.iter().zip(&p).map(|(q, v)| q * v).collect();
    let xqp: Vec<f64> = g.nodes.iter().zip(&op.q.grad_values).zip(&p).map(|((x, dq), v)| x * dq * v).collect();
    let dp = gradient(g, &p);
    let c = 0.5 * (1.0 - a);
    let mult: Vec<f64> = g.nodes.iter().zip(&dp).zip(&p).map(|((x, d), v)| x * d + c * v).collect();
    let trace_sq = Side::BOTH.map(|s| w.basis.trace_of_coeffs(&pm, s).powi(2));
    let bnd = Side::BOTH.iter().map(|&s| trace_sq[s.index()] * g.boundary_point(s) * s.normal()).sum();
    Slice {
        pt_sq: g.inner(&pt, &pt),
        pa0p: g.inner(&p, &a0p),
        qpp: g.inner(&qp, &p),
        xqpp: g.inner(&xqp, &p),
        pt_p: g.inner(&pt, &p),
        xi: g.inner(&pt, &mult),
        bnd,
        trace_sq,
    }
}

/// E = ½‖p_t‖² + ½⟨p, A₀p⟩ + ½⟨qp, p⟩, from nodal values.
pub fn wave_energy(w: &WaveState, t: f64) -> f64 {
    let s = slice(w, t);
    0.5 * (s.pt_sq + s.pa0p + s.qpp)
}

/// Time nodes and weights of composite Gauss–Legendre on [lo, hi] resolving
/// the top frequency 2√λ_J with at least 8 points per period.
fn time_rule(w: &WaveState, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let order = 8;
    let omega = 2.0 * w.basis.lambdas[w.modes() - 1].sqrt();
    let periods = (hi - lo) * omega / (2.0 * std::f64::consts::PI);
    let panels = 64usize.max((periods * 8.0 / order as f64).ceil() as usize * 2);
    GaussLegendre::new(order).composite(lo, hi, panels)
}

/// Both sides of the multiplier identity
///
/// Γ(1+a)²/2 ∫_ε^T Σ_σ ψ_σ² (x·ν) dt = a(T−ε)E(ε) + [⟨p_t, x p' + (1−a)/2 p⟩]_ε^T − a ∫∫ q p² − ½ ∫∫ x q' p².
pub fn multiplier_residual(w: &WaveState, eps: f64, t_final: f64) -> Result<IdentityReport> {
    if !(eps >= 0.0 && eps < t_final) {
        return Err(Error::InvalidArgument(format!("need 0 <= eps < T, got eps = {eps}, T = {t_final}")));
    }
    let a = w.op.a;
    let rule = time_rule(w, eps, t_final);
    let slices: Vec<(f64, Slice)> = rule.par_iter().map(|&(t, wt)| (wt, slice(w, t))).collect();
    let mut bnd = 0.0;
    let mut qint = 0.0;
    let mut xqint = 0.0;
    for (wt, s) in &slices {
        bnd += wt * s.bnd;
        qint += wt * s.qpp;
        xqint += wt * s.xqpp;
    }
    let s0 = slice(w, eps);
    let s1 = slice(w, t_final);
    let e0 = 0.5 * (s0.pt_sq + s0.pa0p + s0.qpp);
    let lhs = pohozaev_constant(a) * bnd;
    let rhs = a * (t_final - eps) * e0 + (s1.xi - s0.xi) - a * qint - 0.5 * xqint;
    Ok(IdentityReport::single("multiplier", w.basis.n(), lhs, rhs))
}

/// −∫‖p_t‖² + ∫⟨p, A₀p⟩ + [⟨p_t, p⟩] + ∫⟨qp, p⟩ = 0, reported as lhs = ∫‖p_t‖².
pub fn equipartition(w: &WaveState, eps: f64, t_final: f64) -> Result<IdentityReport> {
    if !(eps >= 0.0 && eps < t_final) {
        return Err(Error::InvalidArgument(format!("need 0 <= eps < T, got eps = {eps}, T = {t_final}")));
    }
    let rule = time_rule(w, eps, t_final);
    let slices: Vec<(f64, Slice)> = rule.par_iter().map(|&(t, wt)| (wt, slice(w, t))).collect();
    let (mut kin, mut pot) = (0.0, 0.0);
    for (wt, s) in &slices {
        kin += wt * s.pt_sq;
        pot += wt * (s.pa0p + s.qpp);
    }
    let bracket = slice(w, t_final).pt_p - slice(w, eps).pt_p;
    Ok(IdentityReport::single("equipartition", w.basis.n(), kin, pot + bracket))
}

/// ∫₀^T Σ_σ ψ_σ² (x·ν) dt.
pub fn boundary_observation(w: &WaveState, t_final: f64) -> f64 {
    let g = &w.basis.grid;
    let weights = Side::BOTH.map(|s| g.boundary_point(s) * s.normal());
    let rule = time_rule(w, 0.0, t_final);
    rule.iter()
        .map(|&(t, wt)| {
            let (pm, _) = w.modal(t);
            let b: f64 = Side::BOTH.iter().map(|&s| w.basis.trace_of_coeffs(&pm, s).powi(2) * weights[s.index()]).sum();
            wt * b
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveObsEstimate {
    pub modes: usize,
    pub lambda_j: f64,
    pub t_final: f64,
    pub samples: usize,
    /// max over samples and slice times of ρ = 2a E(T*) / (Γ(1+a)² ∫ Σ ψ² (x·ν)).
    pub rho_max: f64,
    /// Per slice time T* ∈ {0, T/2, T}.
    pub rho_max_by_slice: [f64; 3],
    /// T − 1/ρ_max: the smallest T₀ compatible with every sample.
    pub t0_est: f64,
    /// T₀ / λ_J^{1−a}.
    pub c_est: f64,
}

/// Sample the observability ratio over seeded random data in the first J modes.
pub fn wave_obs_sample(op: &Arc<FracOperator>, basis: &Arc<EigenBasis>, j: usize, t_final: f64, samples: usize, seed: u64) -> Result<WaveObsEstimate> {
    if j == 0 || j > basis.n() / 4 {
        return Err(Error::InvalidArgument(format!("J = {j} must lie in 1..={}", basis.n() / 4)));
    }
    if !(t_final > 0.0) {
        return Err(Error::InvalidArgument(format!("T must be positive, got {t_final}")));
    }
    let a = op.a;
    let gam = pohozaev_constant(a);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<(Vec<f64>, Vec<f64>)> = (0..samples).map(|_| random_data(basis, j, &mut rng)).collect();
    let rhos: Vec<[f64; 3]> = data
        .into_par_iter()
        .map(|(ac, bc)| {
            let w = WaveState::new(Arc::clone(op), Arc::clone(basis), ac, bc)?;
            let obs = boundary_observation(&w, t_final);
            Ok([0.0, 0.5 * t_final, t_final].map(|ts| a * wave_energy(&w, ts) / (gam * obs)))
        })
        .collect::<Result<_>>()?;
    let mut by_slice = [0.0f64; 3];
    for r in &rhos {
        for k in 0..3 {
            by_slice[k] = by_slice[k].max(r[k]);
        }
    }
    let rho_max = by_slice.iter().copied().fold(0.0, f64::max);
    let t0_est = t_final - 1.0 / rho_max;
    let lambda_j = basis.lambdas[j - 1];
    Ok(WaveObsEstimate {
        modes: j,
        lambda_j,
        t_final,
        samples,
        rho_max,
        rho_max_by_slice: by_slice,
        t0_est,
        c_est: t0_est / lambda_j.powf(1.0 - a),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T0Fit {
    pub modes: Vec<usize>,
    pub lambda_j: Vec<f64>,
    pub t0_est: Vec<f64>,
    /// Slope of log T₀ against log λ_J.
    pub exponent: f64,
    pub stderr: f64,
    /// e^{intercept}: T₀(J) ≈ constant · λ_J^exponent.
    pub constant: f64,
}

impl T0Fit {
    pub fn t0(&self, lambda: f64) -> f64 {
        self.constant * lambda.powf(self.exponent)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        std::fs::write(path, s + "\n")?;
        Ok(())
    }
}

/// Power-law fit of T₀(J) against λ_J; J with T₀ ≤ 0 cannot enter the log fit.
pub fn fit_t0(estimates: &[WaveObsEstimate]) -> Result<T0Fit> {
    let usable: Vec<&WaveObsEstimate> = estimates.iter().filter(|e| e.t0_est > 0.0).collect();
    if usable.len() < 2 {
        return Err(Error::FitRange(format!("{} positive T0 estimates, need 2", usable.len())));
    }
    let xs: Vec<f64> = usable.iter().map(|e| e.lambda_j.ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|e| e.t0_est.ln()).collect();
    let (exponent, icept, stderr) = linear_fit(&xs, &ys);
    Ok(T0Fit {
        modes: usable.iter().map(|e| e.modes).collect(),
        lambda_j: usable.iter().map(|e| e.lambda_j).collect(),
        t0_est: usable.iter().map(|e| e.t0_est).collect(),
        exponent,
        stderr,
        constant: icept.exp(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveObsReport {
    pub estimate: WaveObsEstimate,
    pub fit: T0Fit,
    /// T₀ from the fitted power law at λ_J.
    pub t0_fit: f64,
    /// E ≤ Γ(1+a)²/(2a(T − T₀)) ∫ Σ ψ² (x·ν) for every sample, with T₀ from the fit.
    pub holds: bool,
    /// Whether the potential meets the smallness hypothesis.
    pub theta_ok: bool,
    pub c_est: f64,
}

/// Sizes used for the T₀ fit.
pub const FIT_MODES: [usize; 4] = [4, 8, 16, 32];
pub const OBS_SAMPLES: usize = 200;

/// Observability experiment at J and T with the T₀(J) power-law fit over [`FIT_MODES`].
pub fn wave_obs_constant(op: &Arc<FracOperator>, basis: &Arc<EigenBasis>, j: usize, t_final: f64, seed: u64) -> Result<WaveObsReport> {
    let theta_ok = ThetaBound::for_grid(op.a, &op.grid)?.check_max(&op.q).is_ok();
    let estimate = wave_obs_sample(op, basis, j, t_final, OBS_SAMPLES, seed)?;
    let fits: Vec<WaveObsEstimate> = FIT_MODES
        .iter()
        .filter(|&&m| m <= basis.n() / 4)
        .map(|&m| if m == j { Ok(estimate.clone()) } else { wave_obs_sample(op, basis, m, t_final, OBS_SAMPLES, seed) })
        .collect::<Result<_>>()?;
    let fit = fit_t0(&fits)?;
    let t0_fit = fit.t0(estimate.lambda_j);
    let holds = t0_fit < t_final && estimate.rho_max <= 1.0 / (t_final - t0_fit);
    Ok(WaveObsReport { c_est: estimate.c_est, estimate, fit, t0_fit, holds, theta_ok })
}

/// Write `wave.csv`: t, E, boundary_trace_sq_left, boundary_trace_sq_right.
pub fn write_wave_csv(w: &WaveState, times: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(["t", "E", "boundary_trace_sq_left", "boundary_trace_sq_right"])?;
    for &t in times {
        let s = slice(w, t);
        let e = 0.5 * (s.pt_sq + s.pa0p + s.qpp);
        out.write_record(&[
            format!("{t:.17e}"),
            format!("{e:.17e}"),
            format!("{:.17e}", s.trace_sq[0]),
            format!("{:.17e}", s.trace_sq[1]),
        ])?;
    }
    out.flush()?;
    Ok(())
}

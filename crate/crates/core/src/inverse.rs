//! Potential identification from boundary traces or final states: forward
//! measurement maps, the duality pairing between the two data types,
//! distinguishability margins and a Tikhonov-regularized Gauss–Newton
//! reconstruction.

use std::sync::Arc;

use faer::{Mat, Side as MatSide};
use faer::linalg::solvers::Solve;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Grid1D, Side};
use crate::error::{Error, Result};
use crate::heat::{kappa, singular_boundary_backward_coeffs, solve_initial, solve_singular_boundary, BoundarySignal};
use crate::operator::{FracOperator, PotentialSpec};
use crate::quadrature::adaptive_gk;
use crate::spectral::{eigendecompose, EigenBasis};
use crate::traces::{IdentityReport, TraceFunctional, TraceProfile};

/// Largest grid accepted by the reconstruction.
pub const MAX_INVERSE_NODES: usize = 64;
/// Forward-difference step on nodal potential values.
pub const JACOBIAN_STEP: f64 = 1e-6;
pub const GRADIENT_TOL: f64 = 1e-8;
const ARMIJO_C: f64 = 1e-4;
const ARMIJO_HALVINGS: usize = 40;

/// Sampling times 0.005·2^k, k = 0..8.
pub fn default_times() -> Vec<f64> {
    (0..8).map(|k| 0.005 * 2f64.powi(k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    InitialToBoundary,
    BoundaryToFinal,
}

/// Inputs of an experiment. Initial data live on their own grid and are
/// resampled onto whatever grid the model uses.
#[derive(Debug, Clone)]
pub enum Probes {
    Initial { grid: Grid1D, fs: Vec<Vec<f64>>, times: Vec<f64> },
    Boundary { signals: Vec<BoundarySignal> },
}

impl Probes {
    pub fn kind(&self) -> MeasurementKind {
        match self {
            Probes::Initial { .. } => MeasurementKind::InitialToBoundary,
            Probes::Boundary { .. } => MeasurementKind::BoundaryToFinal,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Probes::Initial { fs, .. } => fs.len(),
            Probes::Boundary { signals } => signals.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per probe either [ψ⁻(t₀), ψ⁺(t₀), ψ⁻(t₁), ...] or the nodal final state on `data_grid`.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    pub probes: Probes,
    pub data: Vec<Vec<f64>>,
    pub data_grid: Grid1D,
    pub t_final: f64,
    pub noise_level: f64,
}

impl MeasurementSet {
    pub fn new(probes: Probes, data: Vec<Vec<f64>>, data_grid: Grid1D, t_final: f64, noise_level: f64) -> Result<Self> {
        if probes.is_empty() {
            return Err(Error::Inverse("no probes".into()));
        }
        if probes.len() != data.len() {
            return Err(Error::Inverse(format!("{} probes but {} data rows", probes.len(), data.len())));
        }
        if !(t_final > 0.0) || !(noise_level >= 0.0) {
            return Err(Error::InvalidArgument(format!("need T > 0 and noise >= 0, got {t_final}, {noise_level}")));
        }
        let width = match &probes {
            Probes::Initial { grid, fs, times } => {
                check_times(times, t_final)?;
                for f in fs {
                    grid.check_len(f)?;
                }
                2 * times.len()
            }
            Probes::Boundary { signals } => {
                for s in signals {
                    if s.start() < 0.0 || s.end() > t_final * (1.0 + 1e-14) {
                        return Err(Error::InvalidSignal(format!("knots outside [0, {t_final}]")));
                    }
                }
                data_grid.n
            }
        };
        for row in &data {
            if row.len() != width {
                return Err(Error::DimensionMismatch { expected: width, got: row.len() });
            }
        }
        Ok(Self { probes, data, data_grid, t_final, noise_level })
    }

    pub fn kind(&self) -> MeasurementKind {
        self.probes.kind()
    }
}

fn check_times(times: &[f64], t_final: f64) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidArgument("no sampling times".into()));
    }
    for &t in times {
        if !(t > 0.0 && t <= t_final * (1.0 + 1e-14)) {
            return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: t_final });
        }
    }
    Ok(())
}

fn basis_for(a: f64, g: &Grid1D, q: &PotentialSpec) -> Result<Arc<EigenBasis>> {
    Ok(Arc::new(eigendecompose(&FracOperator::assemble(a, g, q)?)?))
}

fn resample(from: &Grid1D, u: &[f64], to: &Grid1D) -> Vec<f64> {
    if from == to {
        return u.to_vec();
    }
    to.nodes.iter().map(|&x| from.interpolate(u, x)).collect()
}

fn traces_from_basis(basis: &EigenBasis, f: &[f64], times: &[f64]) -> Result<Vec<[f64; 2]>> {
    let c = basis.coefficients(f)?;
    Ok(times
        .iter()
        .map(|&t| {
            let ct: Vec<f64> = c.iter().zip(&basis.lambdas).map(|(c, l)| c * (-l * t).exp()).collect();
            Side::BOTH.map(|s| basis.trace_of_coeffs(&ct, s))
        })
        .collect())
}

/// Boundary traces of u_f at each time, both sides.
pub fn forward_trace_map(a: f64, g: &Grid1D, q: &PotentialSpec, f: &[f64], times: &[f64]) -> Result<Vec<[f64; 2]>> {
    g.check_len(f)?;
    for &t in times {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: f64::INFINITY });
        }
    }
    traces_from_basis(&*basis_for(a, g, q)?, f, times)
}

/// u_F(T̃, ·) for singular boundary data F.
pub fn forward_final_map(a: f64, g: &Grid1D, q: &PotentialSpec, signal: &BoundarySignal, t_final: f64) -> Result<Vec<f64>> {
    let basis = basis_for(a, g, q)?;
    solve_singular_boundary(&basis, signal, t_final)?.eval(t_final)
}

/// Both pairings ⟨w_i(0), f⟩ = κ ∫ Σ_σ F ψ(u_i) ds, plus how far apart the two sides get.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualityReport {
    pub identities: Vec<IdentityReport>,
    /// |⟨w₁(0) − w₂(0), f⟩_h|.
    pub pairing_gap: f64,
    /// sup over sampled s and σ of |ψ(u₁) − ψ(u₂)|.
    pub trace_gap: f64,
    /// 2κ ‖F‖_∞ · trace_gap · T̃.
    pub pairing_bound: f64,
}

impl DualityReport {
    pub fn max_residual(&self) -> f64 {
        self.identities.iter().map(|r| r.residual).fold(0.0, f64::max)
    }
}

/// The pairing identity between the backward singular-boundary problem and
/// the initial-value problem, for two potentials. The left side is built from
/// closed-form time integrals in eigen-coefficients; the right side from
/// nodal traces of u_i integrated adaptively in time.
pub fn duality_equivalence_check(
    a: f64,
    g: &Grid1D,
    q1: &PotentialSpec,
    q2: &PotentialSpec,
    f: &[f64],
    signal: &BoundarySignal,
    t_final: f64,
) -> Result<DualityReport> {
    g.check_len(f)?;
    let k = kappa(a);
    let fns = Side::BOTH.map(|s| TraceFunctional::new(g, s, a, TraceProfile::Lattice));
    let [fl, fr] = fns;
    let fns = [fl?, fr?];
    let mut identities = Vec::with_capacity(2);
    let mut w0s = Vec::with_capacity(2);
    let mut bases = Vec::with_capacity(2);
    for (i, q) in [q1, q2].into_iter().enumerate() {
        let basis = basis_for(a, g, q)?;
        let w0 = basis.synthesize(&singular_boundary_backward_coeffs(&basis, signal, t_final)?);
        let lhs = g.inner(&w0, f);
        let integrand = |s: f64| {
            let u = solve_initial(&basis, f, s).expect("time is nonnegative");
            Side::BOTH.iter().map(|&sd| signal.eval(s, sd) * fns[sd.index()].apply(&u)).sum::<f64>()
        };
        let mut breaks: Vec<f64> = signal.times.iter().copied().filter(|&t| t <= t_final).collect();
        if breaks[0] > 0.0 {
            breaks.insert(0, 0.0);
        }
        let scale = g.norm(f) * signal.values.iter().map(|v| v[0].abs().max(v[1].abs())).fold(0.0, f64::max) * t_final;
        let r = adaptive_gk(integrand, &breaks, 1e-13 * scale.max(1e-300), 20_000);
        let rhs = k * r.value;
        identities.push(IdentityReport::single(format!("duality-{}", i + 1), g.n, lhs, rhs));
        w0s.push(w0);
        bases.push(basis);
    }
    let diff: Vec<f64> = w0s[0].iter().zip(&w0s[1]).map(|(x, y)| x - y).collect();
    let pairing_gap = g.inner(&diff, f).abs();
    let mut trace_gap = 0.0f64;
    let samples = 400;
    for m in 0..=samples {
        let s = t_final * m as f64 / samples as f64;
        let u1 = solve_initial(&bases[0], f, s)?;
        let u2 = solve_initial(&bases[1], f, s)?;
        for fnl in &fns {
            trace_gap = trace_gap.max((fnl.apply(&u1) - fnl.apply(&u2)).abs());
        }
    }
    let f_sup = signal.values.iter().map(|v| v[0].abs().max(v[1].abs())).fold(0.0, f64::max);
    Ok(DualityReport { identities, pairing_gap, trace_gap, pairing_bound: 2.0 * k * f_sup * trace_gap * t_final })
}

/// Seeded smooth initial datum: a random combination of six sine modes of the interval.
pub fn random_initial(g: &Grid1D, rng: &mut impl Rng) -> Vec<f64> {
    let r: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (l, x0) = (g.length(), g.x_left);
    g.sample(|x| {
        r.iter()
            .enumerate()
            .map(|(k, c)| c * ((k + 1) as f64 * std::f64::consts::PI * (x - x0) / l).sin())
            .sum()
    })
}

/// Seeded piecewise-linear boundary datum on nine uniform knots, zero at t = 0.
pub fn random_signal(t_final: f64, rng: &mut impl Rng) -> Result<BoundarySignal> {
    let knots = 9;
    let times: Vec<f64> = (0..knots).map(|k| t_final * k as f64 / (knots - 1) as f64).collect();
    let values = (0..knots)
        .map(|k| if k == 0 { [0.0, 0.0] } else { [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)] })
        .collect();
    BoundarySignal::new(times, values)
}

/// Seeded nonnegative bump c·exp(−20(x − x₀)²), c ≤ 0.05.
pub fn random_bump(g: &Grid1D, rng: &mut impl Rng) -> Result<PotentialSpec> {
    let c = rng.random_range(0.0..0.05);
    let x0 = g.center() + 0.5 * g.radius() * rng.random_range(-1.0..1.0);
    PotentialSpec::from_fn(g, |x| c * (-20.0 * (x - x0).powi(2)).exp())
}

/// Smooth boundary probes sin(kπt/T̃)·(1, (−1)^k) on 65 knots.
pub fn default_boundary_probes(count: usize, t_final: f64) -> Result<Vec<BoundarySignal>> {
    (1..=count)
        .map(|k| {
            let times: Vec<f64> = (0..65).map(|m| t_final * m as f64 / 64.0).collect();
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            BoundarySignal::from_fn(times, |t| {
                let v = (k as f64 * std::f64::consts::PI * t / t_final).sin();
                [v, sign * v]
            })
        })
        .collect()
}

/// First `count` eigenfunctions of the operator with potential `q0`.
pub fn initial_probe_basis(a: f64, g: &Grid1D, q0: &PotentialSpec, count: usize) -> Result<Vec<Vec<f64>>> {
    if count == 0 || count > g.n {
        return Err(Error::InvalidArgument(format!("probe count {count} must lie in 1..={}", g.n)));
    }
    let basis = basis_for(a, g, q0)?;
    Ok((0..count).map(|k| basis.mode(k).to_vec()).collect())
}

/// Noiseless model data for `probes` under potential `q` on grid `g`.
fn predict(a: f64, g: &Grid1D, q: &PotentialSpec, probes: &Probes, t_final: f64) -> Result<Vec<Vec<f64>>> {
    let basis = basis_for(a, g, q)?;
    match probes {
        Probes::Initial { grid, fs, times } => fs
            .iter()
            .map(|f| Ok(traces_from_basis(&basis, &resample(grid, f, g), times)?.into_iter().flatten().collect()))
            .collect(),
        Probes::Boundary { signals } => signals
            .iter()
            .map(|s| solve_singular_boundary(&basis, s, t_final)?.eval(t_final))
            .collect(),
    }
}

/// Synthetic data on `g` under `q_true`, with seeded relative Gaussian noise
/// of standard deviation `noise_level·|d|` on every entry.
pub fn synthesize_measurements(
    a: f64,
    g: &Grid1D,
    q_true: &PotentialSpec,
    probes: Probes,
    t_final: f64,
    noise_level: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    let mut data = predict(a, g, q_true, &probes, t_final)?;
    if noise_level > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        for row in &mut data {
            for d in row.iter_mut() {
                *d += noise_level * d.abs() * normal.sample(&mut rng);
            }
        }
    }
    MeasurementSet::new(probes, data, g.clone(), t_final, noise_level)
}

fn normalized_gap(x: &[f64], y: &[f64]) -> f64 {
    let d: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let s = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(y.iter().map(|v| v * v).sum::<f64>().sqrt());
    if s == 0.0 {
        0.0
    } else {
        d / s
    }
}

/// Largest normalized data difference ‖M(q₁) − M(q₂)‖ / max ‖M(q_i)‖ over
/// seeded probes of both kinds, at T̃ = 1 with the default sampling times.
/// Probe k is the same for every `probe_count`.
pub fn distinguishability(a: f64, g: &Grid1D, q1: &PotentialSpec, q2: &PotentialSpec, probe_count: usize, seed: u64) -> Result<f64> {
    if q1.len() != g.n || q2.len() != g.n {
        return Err(Error::DimensionMismatch { expected: g.n, got: q1.len().min(q2.len()) });
    }
    let t_final = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fs = Vec::with_capacity(probe_count);
    let mut signals = Vec::with_capacity(probe_count);
    for _ in 0..probe_count {
        fs.push(random_initial(g, &mut rng));
        signals.push(random_signal(t_final, &mut rng)?);
    }
    let b1 = basis_for(a, g, q1)?;
    let b2 = basis_for(a, g, q2)?;
    let times = default_times();
    let mut margin = 0.0f64;
    for (f, s) in fs.iter().zip(&signals) {
        let t1: Vec<f64> = traces_from_basis(&b1, f, &times)?.into_iter().flatten().collect();
        let t2: Vec<f64> = traces_from_basis(&b2, f, &times)?.into_iter().flatten().collect();
        margin = margin.max(normalized_gap(&t1, &t2));
        let u1 = solve_singular_boundary(&b1, s, t_final)?.eval(t_final)?;
        let u2 = solve_singular_boundary(&b2, s, t_final)?.eval(t_final)?;
        margin = margin.max(normalized_gap(&u1, &u2));
    }
    Ok(margin)
}

/// Residual map q ↦ W (M(q) − d) on a reconstruction grid, flattened over
/// probes. W = √h for final-state data so that squared norms are ‖·‖²_h.
pub struct Model<'a> {
    pub a: f64,
    pub grid: Grid1D,
    pub set: &'a MeasurementSet,
    target: Vec<f64>,
    weight: f64,
}

impl<'a> Model<'a> {
    pub fn new(a: f64, grid: &Grid1D, set: &'a MeasurementSet) -> Result<Self> {
        if grid.n > MAX_INVERSE_NODES {
            return Err(Error::Inverse(format!("n = {} exceeds the limit {MAX_INVERSE_NODES}", grid.n)));
        }
        let (target, weight) = match set.kind() {
            MeasurementKind::InitialToBoundary => (set.data.concat(), 1.0),
            MeasurementKind::BoundaryToFinal => {
                let w = grid.h.sqrt();
                let t = set.data.iter().flat_map(|row| resample(&set.data_grid, row, grid)).map(|v| w * v).collect();
                (t, w)
            }
        };
        Ok(Self { a, grid: grid.clone(), set, target, weight })
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn residual(&self, q: &[f64]) -> Result<Vec<f64>> {
        let spec = PotentialSpec::new(&self.grid, q.to_vec())?;
        let pred = predict(self.a, &self.grid, &spec, &self.set.probes, self.set.t_final)?;
        Ok(pred.concat().iter().zip(&self.target).map(|(p, d)| self.weight * p - d).collect())
    }

    /// Column j of the Jacobian by a forward difference, given r(q).
    pub fn jacobian_column(&self, q: &[f64], r: &[f64], j: usize) -> Result<Vec<f64>> {
        let mut qp = q.to_vec();
        qp[j] += JACOBIAN_STEP;
        let rp = self.residual(&qp)?;
        Ok(rp.iter().zip(r).map(|(a, b)| (a - b) / JACOBIAN_STEP).collect())
    }

    /// Column j by a central difference.
    pub fn jacobian_column_central(&self, q: &[f64], j: usize) -> Result<Vec<f64>> {
        let mut qp = q.to_vec();
        let mut qm = q.to_vec();
        qp[j] += JACOBIAN_STEP;
        qm[j] -= JACOBIAN_STEP;
        let rp = self.residual(&qp)?;
        let rm = self.residual(&qm)?;
        Ok(rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * JACOBIAN_STEP)).collect())
    }

    /// Columns computed concurrently, collected in node order.
    pub fn jacobian(&self, q: &[f64], r: &[f64]) -> Result<Vec<Vec<f64>>> {
        (0..q.len()).into_par_iter().map(|j| self.jacobian_column(q, r, j)).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InverseResult {
    pub q_rec: Vec<f64>,
    /// Φ at the start and after every accepted step.
    pub misfit_history: Vec<f64>,
    /// ½ Σ ‖M(q) − d‖² at the final iterate.
    pub data_misfit: f64,
    pub rel_error: Option<f64>,
    pub regularization: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    pub line_search_failed: bool,
}

fn objective(model: &Model, r: &[f64], q: &[f64], q0: &[f64], reg: f64) -> f64 {
    let h = model.grid.h;
    let data: f64 = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
    let pen: f64 = 0.5 * reg * h * q.iter().zip(q0).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    data + pen
}

/// Relative L²_h distance ‖q − q_true‖ / ‖q_true‖ (absolute when q_true = 0).
pub fn relative_error(g: &Grid1D, q: &[f64], q_true: &[f64]) -> f64 {
    let d: Vec<f64> = q.iter().zip(q_true).map(|(a, b)| a - b).collect();
    let s = g.norm(q_true);
    if s == 0.0 {
        g.norm(&d)
    } else {
        g.norm(&d) / s
    }
}

/// Solve (JᵀJ + reg·h I) δ = −g, adding Levenberg damping if the Cholesky factorization fails.
fn gauss_newton_step(jac: &[Vec<f64>], grad: &[f64], diag: f64) -> Result<Vec<f64>> {
    let n = jac.len();
    let mut h = Mat::from_fn(n, n, |i, j| jac[i].iter().zip(&jac[j]).map(|(a, b)| a * b).sum::<f64>());
    let trace: f64 = (0..n).map(|i| h[(i, i)]).sum::<f64>().max(1e-300);
    for i in 0..n {
        h[(i, i)] += diag;
    }
    let rhs = Mat::from_fn(n, 1, |i, _| -grad[i]);
    let mut damping = 0.0;
    for _ in 0..30 {
        let mut hd = h.clone();
        for i in 0..n {
            hd[(i, i)] += damping;
        }
        if let Ok(llt) = hd.llt(MatSide::Lower) {
            let x = llt.solve(&rhs);
            let step: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
            if step.iter().all(|v| v.is_finite()) {
                return Ok(step);
            }
        }
        damping = if damping == 0.0 { 1e-14 * trace / n as f64 } else { damping * 10.0 };
    }
    Err(Error::NotPositiveDefinite("Gauss-Newton normal matrix".into()))
}

/// Minimize ½ Σ ‖M(q) − d‖² + (reg/2) ‖q − q₀‖²_h by Gauss–Newton with an
/// Armijo backtracking line search.
pub fn reconstruct_potential(
    a: f64,
    g: &Grid1D,
    set: &MeasurementSet,
    reg: f64,
    q0: &[f64],
    max_iters: usize,
    q_true: Option<&[f64]>,
) -> Result<InverseResult> {
    if !(reg >= 0.0) {
        return Err(Error::InvalidArgument(format!("regularization must be >= 0, got {reg}")));
    }
    g.check_len(q0)?;
    if let Some(t) = q_true {
        g.check_len(t)?;
    }
    let model = Model::new(a, g, set)?;
    let diag = reg * g.h;
    let mut q = q0.to_vec();
    let mut r = model.residual(&q)?;
    let mut phi = objective(&model, &r, &q, q0, reg);
    let mut history = vec![phi];
    let mut iterations = 0;
    let mut converged = false;
    let mut line_search_failed = false;
    let mut grad_norm;
    loop {
        let jac = model.jacobian(&q, &r)?;
        let grad: Vec<f64> = jac
            .iter()
            .zip(&q)
            .zip(q0)
            .map(|((col, qi), q0i)| col.iter().zip(&r).map(|(c, v)| c * v).sum::<f64>() + diag * (qi - q0i))
            .collect();
        grad_norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if grad_norm <= GRADIENT_TOL {
            converged = true;
            break;
        }
        if iterations >= max_iters {
            break;
        }
        let step = gauss_newton_step(&jac, &grad, diag)?;
        let slope: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..ARMIJO_HALVINGS {
            let trial: Vec<f64> = q.iter().zip(&step).map(|(qi, s)| qi + alpha * s).collect();
            if let Ok(rt) = model.residual(&trial) {
                let pt = objective(&model, &rt, &trial, q0, reg);
                if pt < phi && pt <= phi + ARMIJO_C * alpha * slope {
                    accepted = Some((trial, rt, pt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((qn, rn, pn)) = accepted else {
            line_search_failed = true;
            break;
        };
        q = qn;
        r = rn;
        phi = pn;
        history.push(phi);
        iterations += 1;
    }
    let data_misfit = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
    Ok(InverseResult {
        rel_error: q_true.map(|t| relative_error(g, &q, t)),
        q_rec: q,
        misfit_history: history,
        data_misfit,
        regularization: reg,
        iterations,
        gradient_norm: grad_norm,
        converged,
        line_search_failed,
    })
}

/// Expected noise level of the data, δ = noise · ‖d‖ in the model's norm.
pub fn noise_estimate(a: f64, g: &Grid1D, set: &MeasurementSet) -> Result<f64> {
    let model = Model::new(a, g, set)?;
    Ok(set.noise_level * model.target.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Run every candidate and keep the largest regularization whose data
/// residual ‖M(q) − d‖ stays within τ·δ; if none does, the smallest residual.
pub fn discrepancy_sweep(
    a: f64,
    g: &Grid1D,
    set: &MeasurementSet,
    regs: &[f64],
    q0: &[f64],
    max_iters: usize,
    q_true: Option<&[f64]>,
    tau: f64,
) -> Result<(InverseResult, Vec<InverseResult>)> {
    if regs.is_empty() {
        return Err(Error::InvalidArgument("empty regularization sweep".into()));
    }
    let delta = noise_estimate(a, g, set)?;
    let runs: Vec<InverseResult> = regs
        .iter()
        .map(|&reg| reconstruct_potential(a, g, set, reg, q0, max_iters, q_true))
        .collect::<Result<_>>()?;
    let resid = |r: &InverseResult| (2.0 * r.data_misfit).sqrt();
    let chosen = runs
        .iter()
        .filter(|r| resid(r) <= tau * delta)
        .max_by(|x, y| x.regularization.total_cmp(&y.regularization))
        .or_else(|| runs.iter().min_by(|x, y| resid(x).total_cmp(&resid(y))))
        .expect("nonempty")
        .clone();
    Ok((chosen, runs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::make_grid;

    const A: f64 = 0.75;

    fn bump(g: &Grid1D, c: f64) -> PotentialSpec {
        PotentialSpec::from_fn(g, |x| c * (-20.0 * x * x).exp()).unwrap()
    }

    #[test]
    fn trace_map_zero_linear_and_gauge() {
        let g = make_grid(-1.0, 1.0, 48).unwrap();
        let q = bump(&g, 0.05);
        let times = default_times();
        let zero = forward_trace_map(A, &g, &q, &vec![0.0; 48], &times).unwrap();
        assert!(zero.iter().flatten().all(|v| *v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f1 = random_initial(&g, &mut rng);
        let f2 = random_initial(&g, &mut rng);
        let mix: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let t1 = forward_trace_map(A, &g, &q, &f1, &times).unwrap();
        let t2 = forward_trace_map(A, &g, &q, &f2, &times).unwrap();
        let tm = forward_trace_map(A, &g, &q, &mix, &times).unwrap();
        for i in 0..times.len() {
            for s in 0..2 {
                assert!((tm[i][s] - (2.0 * t1[i][s] - 0.5 * t2[i][s])).abs() < 1e-10);
            }
        }
        let c = 0.3;
        let shifted = PotentialSpec::new(&g, q.values.iter().map(|v| v + c).collect()).unwrap();
        let ts = forward_trace_map(A, &g, &shifted, &f1, &times).unwrap();
        for (i, t) in times.iter().enumerate() {
            for s in 0..2 {
                let want = t1[i][s] * (-c * t).exp();
                assert!((ts[i][s] - want).abs() < 1e-9 * t1[i][s].abs().max(1.0));
            }
        }
    }

    #[test]
    fn final_map_zero_and_additive() {
        let g = make_grid(-1.0, 1.0, 48).unwrap();
        let q = bump(&g, 0.05);
        let zero = forward_final_map(A, &g, &q, &BoundarySignal::zero(1.0).unwrap(), 1.0).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s1 = random_signal(1.0, &mut rng).unwrap();
        let s2 = random_signal(1.0, &mut rng).unwrap();
        let sum = s1.combine(1.0, &s2, 1.0).unwrap();
        let u1 = forward_final_map(A, &g, &q, &s1, 1.0).unwrap();
        let u2 = forward_final_map(A, &g, &q, &s2, 1.0).unwrap();
        let us = forward_final_map(A, &g, &q, &sum, 1.0).unwrap();
        let scale = g.norm(&u1).max(g.norm(&u2));
        for i in 0..48 {
            assert!((us[i] - u1[i] - u2[i]).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn duality_on_seeded_triples() {
        let g = make_grid(-1.0, 1.0, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let f = random_initial(&g, &mut rng);
            let s = random_signal(1.0, &mut rng).unwrap();
            let q1 = random_bump(&g, &mut rng).unwrap();
            let q2 = random_bump(&g, &mut rng).unwrap();
            let rep = duality_equivalence_check(A, &g, &q1, &q2, &f, &s, 1.0).unwrap();
            assert!(rep.max_residual() <= 1e-6, "{:?}", rep.identities);
            assert!(rep.pairing_gap <= rep.pairing_bound * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn duality_equal_potentials_and_single_segment() {
        let g = make_grid(-1.0, 1.0, 64).unwrap();
        let q = bump(&g, 0.02);
        let basis = basis_for(A, &g, &q).unwrap();
        let f = basis.mode(0).to_vec();
        let s = BoundarySignal::new(vec![0.0, 1.0], vec![[0.0, 0.0], [1.0, -0.5]]).unwrap();
        let rep = duality_equivalence_check(A, &g, &q, &q, &f, &s, 1.0).unwrap();
        assert_eq!(rep.identities[0].lhs, rep.identities[1].lhs);
        assert_eq!(rep.pairing_gap, 0.0);
        // ⟨w(0), φ₁⟩ = κ ∫₀¹ e^{-λ₁ s} s (ψ⁻ − ψ⁺/2) ds in closed form
        let lam = basis.lambdas[0];
        let psi = basis.traces[0];
        let ramp = (1.0 - (-lam).exp() * (1.0 + lam)) / (lam * lam);
        let want = kappa(A) * (psi[0] - 0.5 * psi[1]) * ramp;
        assert!((rep.identities[0].lhs - want).abs() < 1e-10 * want.abs());
        assert!(rep.max_residual() <= 1e-6);
    }

    #[test]
    fn distinguishability_margins() {
        let g = make_grid(-1.0, 1.0, 128).unwrap();
        let q1 = PotentialSpec::zero(&g);
        assert_eq!(distinguishability(A, &g, &q1, &q1, 4, 1).unwrap(), 0.0);
        let q2 = bump(&g, 0.05);
        let m4 = distinguishability(A, &g, &q1, &q2, 4, 1).unwrap();
        let m16 = distinguishability(A, &g, &q1, &q2, 16, 1).unwrap();
        assert!(m16 > 1e-6);
        assert!(m16 >= m4);
    }

    fn crime_set(g: &Grid1D, q_true: &PotentialSpec, count: usize) -> MeasurementSet {
        let fs = initial_probe_basis(A, g, &PotentialSpec::zero(g), count).unwrap();
        let probes = Probes::Initial { grid: g.clone(), fs, times: default_times() };
        synthesize_measurements(A, g, q_true, probes, 1.0, 0.0, 0).unwrap()
    }

    #[test]
    fn zero_truth_converges_immediately() {
        let g = make_grid(-1.0, 1.0, 24).unwrap();
        let set = crime_set(&g, &PotentialSpec::zero(&g), 8);
        let r = reconstruct_potential(A, &g, &set, 1e-6, &vec![0.0; 24], 20, Some(&vec![0.0; 24])).unwrap();
        assert_eq!(r.iterations, 0);
        assert!(r.converged);
    }

    #[test]
    fn same_grid_reconstruction_recovers_bump() {
        let g = make_grid(-1.0, 1.0, 24).unwrap();
        let q = bump(&g, 0.05);
        let set = crime_set(&g, &q, 12);
        let r = reconstruct_potential(A, &g, &set, 1e-8, &vec![0.0; 24], 20, Some(&q.values)).unwrap();
        assert!(r.rel_error.unwrap() < 1e-2, "{r:?}");
        assert!(r.misfit_history.windows(2).all(|w| w[1] < w[0]));
        assert!(*r.misfit_history.last().unwrap() <= r.misfit_history[0] / 10.0);
    }

    #[test]
    fn boundary_probes_reconstruction_runs() {
        let g = make_grid(-1.0, 1.0, 16).unwrap();
        let q = bump(&g, 0.05);
        let probes = Probes::Boundary { signals: default_boundary_probes(4, 1.0).unwrap() };
        let set = synthesize_measurements(A, &g, &q, probes, 1.0, 0.0, 0).unwrap();
        let r = reconstruct_potential(A, &g, &set, 1e-10, &vec![0.0; 16], 10, Some(&q.values)).unwrap();
        assert!(r.misfit_history.windows(2).all(|w| w[1] < w[0]));
        assert!(r.data_misfit < r.misfit_history[0]);
    }

    #[test]
    fn forward_and_central_columns_agree() {
        let g = make_grid(-1.0, 1.0, 24).unwrap();
        let q = bump(&g, 0.05);
        let set = crime_set(&g, &q, 8);
        let model = Model::new(A, &g, &set).unwrap();
        let q0 = vec![0.01; 24];
        let r = model.residual(&q0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let j = rng.random_range(0..24);
            let fwd = model.jacobian_column(&q0, &r, j).unwrap();
            let cen = model.jacobian_column_central(&q0, j).unwrap();
            let d: f64 = fwd.iter().zip(&cen).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let s: f64 = cen.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(d <= 1e-4 * s, "column {j}: {d} vs {s}");
        }
    }

    #[test]
    fn oversized_grid_rejected() {
        let g = make_grid(-1.0, 1.0, 65).unwrap();
        let set = crime_set(&g, &PotentialSpec::zero(&g), 2);
        assert!(matches!(reconstruct_potential(A, &g, &set, 0.0, &vec![0.0; 65], 1, None), Err(Error::Inverse(_))));
    }
}

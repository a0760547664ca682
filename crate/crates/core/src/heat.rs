//! Spectral solvers for the fractional heat equation: initial data, the
//! adjoint problem, the heat kernel and singular boundary data by transposition.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{Grid1D, Side};
use crate::error::{Error, Result};
use crate::operator::{check_parabolic_exponent, interp_table, read_two_column_csv};
use crate::special::gamma_unchecked;
use crate::spectral::EigenBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Decays for t after the anchor.
    Forward,
    /// Adjoint problem: decays for t before the anchor.
    Backward,
}

/// Solution stored as eigen-coefficients at an anchor time.
#[derive(Debug, Clone)]
pub struct HeatCoeffState {
    pub basis: Arc<EigenBasis>,
    pub coeffs: Vec<f64>,
    pub anchor_time: f64,
    pub direction: Direction,
}

impl HeatCoeffState {
    pub fn new(basis: Arc<EigenBasis>, coeffs: Vec<f64>, anchor_time: f64, direction: Direction) -> Self {
        Self { basis, coeffs, anchor_time, direction }
    }

    fn elapsed(&self, t: f64) -> Result<f64> {
        let dt = match self.direction {
            Direction::Forward => t - self.anchor_time,
            Direction::Backward => self.anchor_time - t,
        };
        if dt < 0.0 || !dt.is_finite() {
            let (lo, hi) = match self.direction {
                Direction::Forward => (self.anchor_time, f64::INFINITY),
                Direction::Backward => (f64::NEG_INFINITY, self.anchor_time),
            };
            return Err(Error::TimeOutOfRange { t, lo, hi });
        }
        Ok(dt)
    }

    pub fn coeffs_at(&self, t: f64) -> Result<Vec<f64>> {
        let dt = self.elapsed(t)?;
        Ok(self.coeffs.iter().zip(&self.basis.lambdas).map(|(c, l)| c * (-l * dt).exp()).collect())
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.basis.synthesize(&self.coeffs_at(t)?))
    }

    /// (u/d^a)(t, side) from the mode traces.
    pub fn trace_at(&self, t: f64, side: Side) -> Result<f64> {
        Ok(self.basis.trace_of_coeffs(&self.coeffs_at(t)?, side))
    }

    /// ‖u(t)‖_h, exact through Parseval.
    pub fn norm_at(&self, t: f64) -> Result<f64> {
        Ok(self.coeffs_at(t)?.iter().map(|c| c * c).sum::<f64>().sqrt())
    }
}

/// Σ_n e^{-λ_n t} ⟨φ_n, f⟩_h φ_n.
pub fn solve_initial(basis: &EigenBasis, f: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: f64::INFINITY });
    }
    let c = basis.coefficients(f)?;
    let ct: Vec<f64> = c.iter().zip(&basis.lambdas).map(|(c, l)| c * (-l * t).exp()).collect();
    Ok(basis.synthesize(&ct))
}

/// Adjoint solution with terminal data f* at T̃, evaluated at t ∈ [0, T̃].
pub fn solve_adjoint(basis: &EigenBasis, f_star: &[f64], t_final: f64, t: f64) -> Result<Vec<f64>> {
    if !(0.0..=t_final).contains(&t) {
        return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: t_final });
    }
    solve_initial(basis, f_star, t_final - t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelValue {
    pub value: f64,
    /// Bound on the dropped modes: e^{-λ_{N+1} t} / h (zero when nothing is dropped).
    pub tail_bound: f64,
}

/// Truncated heat kernel P(t, x_i, x_j) over the first `n_terms` modes; `i`, `j` 1-based.
pub fn heat_kernel_eval(basis: &EigenBasis, t: f64, i: usize, j: usize, n_terms: usize) -> Result<KernelValue> {
    let n = basis.n();
    if !(t > 0.0) {
        return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: f64::INFINITY });
    }
    for idx in [i, j] {
        if idx == 0 || idx > n {
            return Err(Error::IndexOutOfRange { index: idx, n });
        }
    }
    let m = n_terms.min(n);
    // summand symmetric in (i, j): the product is formed in a fixed order
    let value = (0..m)
        .map(|k| {
            let (a, b) = if i <= j { (basis.phi[k][i - 1], basis.phi[k][j - 1]) } else { (basis.phi[k][j - 1], basis.phi[k][i - 1]) };
            (-basis.lambdas[k] * t).exp() * a * b
        })
        .sum();
    // Σ_k φ_k(x_i)² = 1/h, so Cauchy–Schwarz bounds the tail mass by 1/h
    let tail_bound = if m < n { (-basis.lambdas[m] * t).exp() / basis.grid.h } else { 0.0 };
    Ok(KernelValue { value, tail_bound })
}

/// Boundary data F(t, σ), piecewise linear between knots and zero outside them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySignal {
    pub times: Vec<f64>,
    /// (F_left, F_right) per knot.
    pub values: Vec<[f64; 2]>,
}

impl BoundarySignal {
    pub fn new(times: Vec<f64>, values: Vec<[f64; 2]>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: times.len(), got: values.len() });
        }
        if times.len() < 2 {
            return Err(Error::InvalidSignal("need at least two knots".into()));
        }
        if times[0] < 0.0 || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidSignal("knot times must be finite and nonnegative".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSignal("knot times must increase strictly".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSignal("non-finite value".into()));
        }
        if values[0] != [0.0, 0.0] {
            return Err(Error::InvalidSignal("F must vanish at the first knot".into()));
        }
        Ok(Self { times, values })
    }

    /// Identically zero signal on [0, t_end].
    pub fn zero(t_end: f64) -> Result<Self> {
        Self::new(vec![0.0, t_end], vec![[0.0; 2]; 2])
    }

    /// Sample `f(t) -> [F_left, F_right]` at the given knots.
    pub fn from_fn(times: Vec<f64>, f: impl Fn(f64) -> [f64; 2]) -> Result<Self> {
        let values = times.iter().map(|&t| f(t)).collect();
        Self::new(times, values)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn eval(&self, t: f64, side: Side) -> f64 {
        let s = side.index();
        if t < self.start() || t > self.end() {
            return 0.0;
        }
        let k = self.times.partition_point(|&x| x <= t);
        if k == self.times.len() {
            return self.values[k - 1][s];
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        (1.0 - w) * self.values[k - 1][s] + w * self.values[k][s]
    }

    /// α F + β G on the union of the knot sets; exact when both signals end at
    /// the same time or vanish at their last knot.
    pub fn combine(&self, alpha: f64, other: &BoundarySignal, beta: f64) -> Result<Self> {
        let mut times: Vec<f64> = self.times.iter().chain(&other.times).copied().collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let values = times
            .iter()
            .map(|&t| Side::BOTH.map(|s| alpha * self.eval(t, s) + beta * other.eval(t, s)))
            .collect();
        let mut out = Self { times, values };
        // a leading zero keeps the first-knot condition when the starts differ
        if out.values[0] != [0.0, 0.0] {
            return Err(Error::InvalidSignal("combination does not vanish at its first knot".into()));
        }
        out.values[0] = [0.0, 0.0];
        Ok(out)
    }

    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::InvalidSignal(format!("missing column `{name}`")))
        };
        let (it, il, ir) = (col("t")?, col("F_left")?, col("F_right")?);
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i].trim().parse().map_err(|_| Error::InvalidSignal(format!("bad number `{}`", &rec[i])))
            };
            times.push(num(it)?);
            values.push([num(il)?, num(ir)?]);
        }
        Self::new(times, values)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "F_left", "F_right"])?;
        for (t, v) in self.times.iter().zip(&self.values) {
            w.write_record(&[format!("{t:.17e}"), format!("{:.17e}", v[0]), format!("{:.17e}", v[1])])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Write a state snapshot as CSV `x,u`.
pub fn write_snapshot(grid: &Grid1D, u: &[f64], path: impl AsRef<Path>) -> Result<()> {
    grid.check_len(u)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "u"])?;
    for (x, v) in grid.nodes.iter().zip(u) {
        w.write_record(&[format!("{x:.17e}"), format!("{v:.17e}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Read a snapshot CSV `x,u` and interpolate it onto `grid`.
pub fn read_snapshot(grid: &Grid1D, path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let (xs, us) = read_two_column_csv(path, "x", "u")?;
    Ok(grid.nodes.iter().map(|&x| interp_table(&xs, &us, x)).collect())
}

/// Pairing constant Γ(a) Γ(a + 1) of the singular boundary data.
pub fn kappa(a: f64) -> f64 {
    gamma_unchecked(a) * gamma_unchecked(a + 1.0)
}

/// (1 - e^{-x}) / x = ∫₀¹ e^{-xu} du.
pub(crate) fn phi0(x: f64) -> f64 {
    if x.abs() < 0.5 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..20 {
            term *= -x / (k as f64 + 1.0);
            sum += term;
        }
        sum
    } else {
        -(-x).exp_m1() / x
    }
}

/// (1 - e^{-x}(1 + x)) / x² = ∫₀¹ u e^{-xu} du.
pub(crate) fn phi1(x: f64) -> f64 {
    if x.abs() < 0.5 {
        // Σ (-x)^k / (k! (k + 2))
        let mut fact = 1.0;
        let mut sum = 0.5;
        for k in 1..20 {
            fact *= -x / k as f64;
            sum += fact / (k as f64 + 2.0);
        }
        sum
    } else {
        (-(-x).exp_m1() - x * (-x).exp()) / (x * x)
    }
}

/// ∫ over one linear segment [t0, t1] of e^{-λ(T̃ - s)} F(s) ds, with F(t0) = f0, F(t1) = f1.
pub(crate) fn segment_forward(lambda: f64, t_final: f64, t0: f64, t1: f64, f0: f64, f1: f64) -> f64 {
    let dt = t1 - t0;
    let x = lambda * dt;
    dt * (-lambda * (t_final - t1)).exp() * (f1 * phi0(x) + (f0 - f1) * phi1(x))
}

/// ∫ over [t0, t1] of e^{-λ s} F(s) ds.
pub(crate) fn segment_backward(lambda: f64, t0: f64, t1: f64, f0: f64, f1: f64) -> f64 {
    let dt = t1 - t0;
    let x = lambda * dt;
    dt * (-lambda * t0).exp() * (f0 * phi0(x) + (f1 - f0) * phi1(x))
}

fn check_signal_range(signal: &BoundarySignal, t_final: f64) -> Result<()> {
    if !(t_final > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {t_final}")));
    }
    if signal.start() < 0.0 || signal.end() > t_final * (1.0 + 1e-14) {
        return Err(Error::InvalidSignal(format!(
            "knots span [{}, {}], outside [0, {t_final}]",
            signal.start(),
            signal.end()
        )));
    }
    Ok(())
}

/// Transposition coefficients κ ∫₀^T̃ e^{-λ_n(T̃-s)} Σ_σ F(s,σ) ψ_n^σ ds for the first `modes` modes.
pub fn singular_boundary_coeffs(basis: &EigenBasis, signal: &BoundarySignal, t_final: f64, modes: usize) -> Result<Vec<f64>> {
    check_parabolic_exponent(basis.a)?;
    check_signal_range(signal, t_final)?;
    let k = kappa(basis.a);
    let m = modes.min(basis.n());
    let mut out = Vec::with_capacity(m);
    for n in 0..m {
        let lam = basis.lambdas[n];
        let psi = basis.traces[n];
        if !(psi[0].is_finite() && psi[1].is_finite()) {
            return Err(Error::NonFiniteTraces);
        }
        let mut acc = 0.0;
        for w in 0..signal.len() - 1 {
            let (t0, t1) = (signal.times[w], signal.times[w + 1].min(t_final));
            // e^{-λ(T̃ - t1)} underflows: nothing left of this segment
            if -lam * (t_final - t1) < -745.0 {
                continue;
            }
            let (v0, v1) = (signal.values[w], signal.values[w + 1]);
            let f0 = v0[0] * psi[0] + v0[1] * psi[1];
            let f1 = v1[0] * psi[0] + v1[1] * psi[1];
            acc += segment_forward(lam, t_final, t0, t1, f0, f1);
        }
        out.push(k * acc);
    }
    Ok(out)
}

/// Backward counterpart: the solution w of -w_t + A w = 0 with w(T̃) = 0 and
/// singular boundary data F, at t = 0, as κ ∫₀^T̃ e^{-λ_n s} Σ_σ F(s,σ) ψ_n^σ ds.
/// No vanishing condition on F is needed at either end.
pub fn singular_boundary_backward_coeffs(basis: &EigenBasis, signal: &BoundarySignal, t_final: f64) -> Result<Vec<f64>> {
    check_parabolic_exponent(basis.a)?;
    check_signal_range(signal, t_final)?;
    let k = kappa(basis.a);
    let mut out = Vec::with_capacity(basis.n());
    for n in 0..basis.n() {
        let lam = basis.lambdas[n];
        let psi = basis.traces[n];
        let mut acc = 0.0;
        for w in 0..signal.len() - 1 {
            let (t0, t1) = (signal.times[w], signal.times[w + 1]);
            let (v0, v1) = (signal.values[w], signal.values[w + 1]);
            let f0 = v0[0] * psi[0] + v0[1] * psi[1];
            let f1 = v1[0] * psi[0] + v1[1] * psi[1];
            acc += segment_backward(lam, t0, t1, f0, f1);
        }
        out.push(k * acc);
    }
    Ok(out)
}

/// State u_F at T̃ (forward anchor) for singular boundary data F with F(0) = 0.
pub fn solve_singular_boundary(basis: &Arc<EigenBasis>, signal: &BoundarySignal, t_final: f64) -> Result<HeatCoeffState> {
    let c = singular_boundary_coeffs(basis, signal, t_final, basis.n())?;
    Ok(HeatCoeffState::new(Arc::clone(basis), c, t_final, Direction::Forward))
}

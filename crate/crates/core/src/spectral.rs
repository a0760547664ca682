//! Eigendecomposition of the discrete operator and derived spectral quantities.

use std::io::Write;
use std::path::Path;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side as MatSide};
use serde::{Deserialize, Serialize};

use crate::domain::{Grid1D, Side};
use crate::error::{Error, Result};
use crate::operator::{check_exponent, FracOperator, PotentialSpec};
use crate::traces::{TraceFunctional, TraceProfile, TRACE_STENCIL};

/// Eigenvalues (ascending) and eigenvectors of a dense symmetric matrix.
/// Columns are unit Euclidean vectors, sign-normalized so that the entry of
/// largest magnitude (the first one, among near ties) is positive.
pub fn symmetric_eigen(mat: &Mat<f64>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = mat.nrows();
    let evd = mat.self_adjoint_eigen(MatSide::Lower).map_err(|_| Error::EigenNotConverged)?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let mut lambdas = Vec::with_capacity(n);
    let mut vecs = Vec::with_capacity(n);
    for k in 0..n {
        let lam = s[k];
        if !lam.is_finite() {
            return Err(Error::EigenNotConverged);
        }
        let mut v: Vec<f64> = (0..n).map(|i| u[(i, k)]).collect();
        // mirrored entries of odd modes tie up to rounding; take the first
        let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let imax = v.iter().position(|x| x.abs() >= (1.0 - 1e-8) * vmax).unwrap_or(0);
        if v[imax] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        lambdas.push(lam);
        vecs.push(v);
    }
    Ok((lambdas, vecs))
}

/// Eigenpairs of a [`FracOperator`] with boundary traces φ/d^a.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    pub a: f64,
    pub grid: Grid1D,
    /// Potential at the nodes of the decomposed operator.
    pub q: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Columns φ_k, orthonormal in ⟨·,·⟩_h.
    pub phi: Vec<Vec<f64>>,
    /// (ψ_left, ψ_right) per mode; NaN when the grid is too small for the stencil.
    pub traces: Vec<[f64; 2]>,
    trace_fns: Option<[TraceFunctional; 2]>,
}

impl EigenBasis {
    pub fn n(&self) -> usize {
        self.lambdas.len()
    }

    pub fn mode(&self, k: usize) -> &[f64] {
        &self.phi[k]
    }

    /// ⟨φ_k, u⟩_h for the first `count` modes.
    pub fn coefficients_truncated(&self, u: &[f64], count: usize) -> Result<Vec<f64>> {
        self.grid.check_len(u)?;
        Ok(self.phi[..count.min(self.n())].iter().map(|p| self.grid.inner(p, u)).collect())
    }

    pub fn coefficients(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.coefficients_truncated(u, self.n())
    }

    /// Σ c_k φ_k over the supplied coefficients (leading modes).
    pub fn synthesize(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n];
        for (ck, p) in c.iter().zip(&self.phi) {
            if *ck == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(p) {
                *o += ck * v;
            }
        }
        out
    }

    /// Lattice-profile trace u/d^a of a grid function.
    pub fn trace_of(&self, u: &[f64], side: Side) -> Result<f64> {
        self.grid.check_len(u)?;
        match &self.trace_fns {
            Some(f) => Ok(f[side.index()].apply(u)),
            None => Err(Error::InvalidGrid(format!(
                "trace stencil needs n >= {}, got {}",
                2 * TRACE_STENCIL,
                self.grid.n
            ))),
        }
    }

    /// Trace of Σ c_k φ_k computed from the stored mode traces.
    pub fn trace_of_coeffs(&self, c: &[f64], side: Side) -> f64 {
        c.iter().zip(&self.traces).map(|(ck, t)| ck * t[side.index()]).sum()
    }

    /// ‖A φ_k - λ_k φ_k‖_h.
    pub fn residual(&self, op: &FracOperator, k: usize) -> f64 {
        let av = op.apply(&self.phi[k]);
        let r: Vec<f64> = av.iter().zip(&self.phi[k]).map(|(x, p)| x - self.lambdas[k] * p).collect();
        self.grid.norm(&r)
    }

    /// Write `spectrum.csv`: k, lambda, trace_left, trace_right.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "lambda", "trace_left", "trace_right"])?;
        for (k, (lam, t)) in self.lambdas.iter().zip(&self.traces).enumerate() {
            w.write_record(&[
                (k + 1).to_string(),
                format!("{lam:.17e}"),
                format!("{:.17e}", t[0]),
                format!("{:.17e}", t[1]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Full eigendecomposition of the operator; columns rescaled to unit h-norm.
pub fn eigendecompose(op: &FracOperator) -> Result<EigenBasis> {
    let grid = op.grid.clone();
    let (lambdas, mut phi) = symmetric_eigen(&op.matrix)?;
    let s = 1.0 / grid.h.sqrt();
    for v in &mut phi {
        v.iter_mut().for_each(|x| *x *= s);
    }
    let trace_fns = if grid.n >= 2 * TRACE_STENCIL {
        Some([
            TraceFunctional::new(&grid, Side::Left, op.a, TraceProfile::Lattice)?,
            TraceFunctional::new(&grid, Side::Right, op.a, TraceProfile::Lattice)?,
        ])
    } else {
        None
    };
    let traces = phi
        .iter()
        .map(|p| match &trace_fns {
            Some(f) => [f[0].apply(p), f[1].apply(p)],
            None => [f64::NAN; 2],
        })
        .collect();
    Ok(EigenBasis { a: op.a, grid, q: op.q.values.clone(), lambdas, phi, traces, trace_fns })
}

/// Least-squares slope of log λ_k against log k over k_min..=k_max (1-based).
pub fn weyl_slope(basis: &EigenBasis, k_min: usize, k_max: usize) -> Result<f64> {
    let n = basis.n();
    if k_min < 1 || k_max <= k_min || k_max > n / 2 {
        return Err(Error::FitRange(format!(
            "need 1 <= k_min < k_max <= n/2 = {}, got [{k_min}, {k_max}]",
            n / 2
        )));
    }
    if k_max - k_min + 1 < 8 {
        return Err(Error::FitRange(format!("[{k_min}, {k_max}] has fewer than 8 points")));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in k_min..=k_max {
        let lam = basis.lambdas[k - 1];
        if lam <= 0.0 {
            return Err(Error::FitRange(format!("non-positive eigenvalue at k = {k}")));
        }
        xs.push((k as f64).ln());
        ys.push(lam.ln());
    }
    Ok(linear_fit(&xs, &ys).0)
}

/// Ordinary least squares y ≈ c + s x; returns (slope, intercept, slope stderr).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    let stderr = if xs.len() > 2 {
        let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - icept - slope * x).powi(2)).sum();
        (sse / (m - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    (slope, icept, stderr)
}

/// 1/λ₁ of the potential-free operator on `g`, by inverse iteration.
pub fn poincare_constant(a: f64, g: &Grid1D) -> Result<f64> {
    check_exponent(a)?;
    let op = FracOperator::free(a, g)?;
    let llt = op
        .matrix
        .llt(MatSide::Lower)
        .map_err(|_| Error::NotPositiveDefinite("free operator".into()))?;
    let n = g.n;
    // the ground state is positive, so a constant start has full overlap
    let mut v = Mat::<f64>::from_fn(n, 1, |_, _| 1.0 / (n as f64).sqrt());
    let mut lam = f64::INFINITY;
    for _ in 0..500 {
        let w = llt.solve(&v);
        let nw = w.col(0).norm_l2();
        let vw: f64 = (0..n).map(|i| v[(i, 0)] * w[(i, 0)]).sum();
        let next = 1.0 / vw;
        v = Mat::from_fn(n, 1, |i, _| w[(i, 0)] / nw);
        if (next - lam).abs() <= 1e-15 * next {
            lam = next;
            break;
        }
        lam = next;
    }
    Ok(1.0 / lam)
}

/// Admissible size θ_max = ½ (1 + C_HS (N/2 + R))⁻¹ of the potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaBound {
    pub c_hs: f64,
    pub r: f64,
    pub n_dim: usize,
    pub theta_max: f64,
}

pub fn theta_bound(c_hs: f64, n_dim: usize, r: f64) -> Result<ThetaBound> {
    if !(c_hs > 0.0 && r > 0.0 && n_dim > 0) {
        return Err(Error::InvalidArgument(format!(
            "theta bound needs positive inputs, got C_HS = {c_hs}, N = {n_dim}, R = {r}"
        )));
    }
    let theta_max = 0.5 / (1.0 + c_hs * (0.5 * n_dim as f64 + r));
    Ok(ThetaBound { c_hs, r, n_dim, theta_max })
}

impl ThetaBound {
    /// Bound for the potential-free operator on `g`; R = max |x| over the interval.
    pub fn for_grid(a: f64, g: &Grid1D) -> Result<Self> {
        theta_bound(poincare_constant(a, g)?, 1, g.x_left.abs().max(g.x_right.abs()))
    }

    /// q ≥ 0, sup|q| ≤ θ and sup|∇q| ≤ θ for a user θ strictly below θ_max.
    pub fn admits(&self, q: &PotentialSpec, theta: f64) -> bool {
        self.check(q, theta).is_ok()
    }

    pub fn check(&self, q: &PotentialSpec, theta: f64) -> Result<()> {
        if !(theta < self.theta_max) {
            return Err(Error::ThetaCondition(format!("theta = {theta} not below theta_max = {}", self.theta_max)));
        }
        if !q.nonneg {
            return Err(Error::ThetaCondition("potential takes negative values".into()));
        }
        if q.sup_q > theta {
            return Err(Error::ThetaCondition(format!("sup |q| = {} exceeds theta = {theta}", q.sup_q)));
        }
        if q.sup_grad_q > theta {
            return Err(Error::ThetaCondition(format!(
                "sup |grad q| = {} exceeds theta = {theta}",
                q.sup_grad_q
            )));
        }
        Ok(())
    }

    /// Same as [`Self::check`] with the largest usable θ just below θ_max.
    pub fn check_max(&self, q: &PotentialSpec) -> Result<()> {
        let theta = self.theta_max * (1.0 - f64::EPSILON);
        if q.sup_q >= self.theta_max || q.sup_grad_q >= self.theta_max {
            return Err(Error::ThetaCondition(format!(
                "sup |q| = {}, sup |grad q| = {} not below theta_max = {}",
                q.sup_q, q.sup_grad_q, self.theta_max
            )));
        }
        self.check(q, theta)
    }
}

/// Plain text dump used by the CLI when stdout is requested.
pub fn write_spectrum_table(basis: &EigenBasis, mut w: impl Write) -> std::io::Result<()> {
    for (k, lam) in basis.lambdas.iter().enumerate() {
        writeln!(w, "{} {lam:.12e}", k + 1)?;
    }
    Ok(())
}

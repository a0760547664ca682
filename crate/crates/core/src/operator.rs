//! Dense discretization of the restricted fractional Laplacian plus a potential.
//!
//! The stencil is the lattice fractional Laplacian: the weights `K(m)` are the
//! exact coefficients of the a-th power of the second-difference operator on
//! ℤ, scaled by `h^(-2a)`. Nodes outside the interval carry zero, and the
//! diagonal keeps the full lattice sum `S(a) = 2 Σ K(m)`.

use std::f64::consts::PI;
use std::path::Path;

use faer::linalg::solvers::Solve;
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::domain::Grid1D;
use crate::error::{Error, Result};
use crate::special::{gamma_ratio, gamma_unchecked};

pub(crate) fn check_exponent(a: f64) -> Result<()> {
    if a > 0.0 && a < 1.0 {
        Ok(())
    } else {
        Err(Error::ExponentOutOfRange { a, range: "(0, 1)" })
    }
}

pub(crate) fn check_parabolic_exponent(a: f64) -> Result<()> {
    if a > 0.5 && a < 1.0 {
        Ok(())
    } else {
        Err(Error::ExponentOutOfRange { a, range: "(1/2, 1)" })
    }
}

/// Normalization 4^a Γ(1/2 + a) / (√π |Γ(-a)|) of the one-dimensional
/// singular-integral kernel, taken positive.
pub fn kernel_prefactor(a: f64) -> f64 {
    4f64.powf(a) * gamma_unchecked(0.5 + a) / (PI.sqrt() * gamma_unchecked(-a).abs())
}

/// Lattice weight K(m) = C Γ(m - a) / Γ(m + 1 + a) for m ≥ 1.
pub fn kernel_weight(a: f64, m: usize) -> Result<f64> {
    check_exponent(a)?;
    if m == 0 {
        return Err(Error::InvalidArgument("kernel weight needs m >= 1".into()));
    }
    Ok(kernel_prefactor(a) / gamma_ratio(m as f64 - a, 1.0 + 2.0 * a))
}

/// K(1), ..., K(count) by the ratio recurrence K(m+1) = K(m) (m - a) / (m + 1 + a).
pub fn kernel_weights(a: f64, count: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return Ok(out);
    }
    let mut k = kernel_weight(a, 1)?;
    for m in 1..=count {
        out.push(k);
        let mf = m as f64;
        k *= (mf - a) / (mf + 1.0 + a);
    }
    Ok(out)
}

/// Closed form of S(a) = 2 Σ_{m≥1} K(m) = 4^a Γ(1/2 + a) / (√π Γ(1 + a)).
pub fn diagonal_sum(a: f64) -> Result<f64> {
    check_exponent(a)?;
    Ok(kernel_prefactor(a) * gamma_unchecked(1.0 - a) / (a * gamma_unchecked(1.0 + a)))
}

/// Potential sampled at the interior nodes together with its discrete gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub values: Vec<f64>,
    pub grad_values: Vec<f64>,
    pub nonneg: bool,
    pub sup_q: f64,
    pub sup_grad_q: f64,
}

impl PotentialSpec {
    pub fn new(grid: &Grid1D, values: Vec<f64>) -> Result<Self> {
        grid.check_len(&values)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite potential value".into()));
        }
        let n = values.len();
        let h = grid.h;
        let grad_values: Vec<f64> = (0..n)
            .map(|i| {
                if i == 0 {
                    (values[1] - values[0]) / h
                } else if i == n - 1 {
                    (values[n - 1] - values[n - 2]) / h
                } else {
                    (values[i + 1] - values[i - 1]) / (2.0 * h)
                }
            })
            .collect();
        let sup_q = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sup_grad_q = grad_values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let nonneg = values.iter().all(|&v| v >= 0.0);
        Ok(Self { values, grad_values, nonneg, sup_q, sup_grad_q })
    }

    pub fn zero(grid: &Grid1D) -> Self {
        Self::new(grid, vec![0.0; grid.n]).expect("zero potential matches grid")
    }

    pub fn from_fn(grid: &Grid1D, q: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.sample(q))
    }

    /// Linear interpolation of tabulated `(x, q)` samples onto the grid; zero
    /// outside the tabulated range.
    pub fn from_table(grid: &Grid1D, xs: &[f64], qs: &[f64]) -> Result<Self> {
        let values = grid.nodes.iter().map(|&x| interp_table(xs, qs, x)).collect();
        Self::new(grid, values)
    }

    /// Read a CSV with header `x,q`.
    pub fn from_csv(grid: &Grid1D, path: impl AsRef<Path>) -> Result<Self> {
        let (xs, qs) = read_two_column_csv(path, "x", "q")?;
        Self::from_table(grid, &xs, &qs)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub(crate) fn interp_table(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if xs.is_empty() || x < xs[0] || x > xs[xs.len() - 1] {
        return 0.0;
    }
    let k = xs.partition_point(|&v| v <= x);
    if k == 0 {
        return ys[0];
    }
    if k >= xs.len() {
        return ys[xs.len() - 1];
    }
    let (x0, x1) = (xs[k - 1], xs[k]);
    let w = (x - x0) / (x1 - x0);
    (1.0 - w) * ys[k - 1] + w * ys[k]
}

/// Two-column numeric CSV with the given header names, sorted by the first column.
pub(crate) fn read_two_column_csv(
    path: impl AsRef<Path>,
    first: &str,
    second: &str,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("csv is missing column `{name}`")))
    };
    let (i0, i1) = (col(first)?, col(second)?);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("bad number in row {:?}", rec)))
        };
        rows.push((parse(i0)?, parse(i1)?));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(rows.into_iter().unzip())
}

/// Assembled operator (-Δ)^a + q on the interior nodes.
#[derive(Debug, Clone)]
pub struct FracOperator {
    pub a: f64,
    pub grid: Grid1D,
    pub q: PotentialSpec,
    /// Dense symmetric matrix, units length^(-2a).
    pub matrix: Mat<f64>,
    /// K(1), ..., K(n - 1) before the h^(-2a) scaling.
    pub kernel_weights: Vec<f64>,
    pub diag_sum: f64,
}

impl FracOperator {
    pub fn assemble(a: f64, grid: &Grid1D, q: &PotentialSpec) -> Result<Self> {
        check_exponent(a)?;
        if q.len() != grid.n {
            return Err(Error::DimensionMismatch { expected: grid.n, got: q.len() });
        }
        let n = grid.n;
        let weights = kernel_weights(a, n - 1)?;
        let s = diagonal_sum(a)?;
        let scale = grid.h.powf(-2.0 * a);
        let mut stencil = Vec::with_capacity(n);
        stencil.push(scale * s);
        stencil.extend(weights.iter().map(|k| -scale * k));
        let matrix = Mat::from_fn(n, n, |i, j| {
            let v = stencil[i.abs_diff(j)];
            if i == j {
                v + q.values[i]
            } else {
                v
            }
        });
        Ok(Self { a, grid: grid.clone(), q: q.clone(), matrix, kernel_weights: weights, diag_sum: s })
    }

    /// Operator without potential on the given grid.
    pub fn free(a: f64, grid: &Grid1D) -> Result<Self> {
        Self::assemble(a, grid, &PotentialSpec::zero(grid))
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    /// h^(-2a).
    pub fn scale(&self) -> f64 {
        self.grid.h.powf(-2.0 * self.a)
    }

    /// A u.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(u.len(), n);
        let mut out = vec![0.0; n];
        for j in 0..n {
            let uj = u[j];
            if uj == 0.0 {
                continue;
            }
            let col = self.matrix.col(j);
            for (i, o) in out.iter_mut().enumerate() {
                *o += col[i] * uj;
            }
        }
        out
    }

    /// (A - diag q) u, the fractional Laplacian alone.
    pub fn apply_fractional(&self, u: &[f64]) -> Vec<f64> {
        let mut out = self.apply(u);
        for ((o, q), v) in out.iter_mut().zip(&self.q.values).zip(u) {
            *o -= q * v;
        }
        out
    }

    /// One row of A applied to `u`, without forming the full product.
    pub fn apply_row(&self, i: usize, u: &[f64]) -> f64 {
        let row = self.matrix.row(i);
        (0..self.n()).map(|j| row[j] * u[j]).sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.matrix.row(i).iter().sum()).collect()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.n();
        let mut m = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                m = m.max((self.matrix[(i, j)] - self.matrix[(j, i)]).abs());
            }
        }
        m
    }

    /// Same operator with the potential shifted by a constant.
    pub fn with_potential(&self, q: &PotentialSpec) -> Result<Self> {
        Self::assemble(self.a, &self.grid, q)
    }
}

/// c_a = 4^a Γ(1+a) Γ(1/2+a) / √π, so that (-Δ)^a (R² - |x - x₀|²)₊^a = c_a inside the ball.
pub fn explicit_constant(a: f64) -> f64 {
    4f64.powf(a) * gamma_unchecked(1.0 + a) * gamma_unchecked(0.5 + a) / PI.sqrt()
}

/// Discrete solve of A u = c_a·1 against (R² - |x - x₀|²)^a, per grid size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleStudy {
    pub a: f64,
    pub sizes: Vec<usize>,
    /// max relative error over nodes with d ≥ 4h.
    pub max_rel_errors: Vec<f64>,
    /// u/d^a at the first node against the exact trace (2R)^a, left side.
    pub trace_ratio: Vec<f64>,
}

impl OracleStudy {
    pub fn strictly_decreasing(&self) -> bool {
        self.max_rel_errors.windows(2).all(|w| w[1] < w[0])
    }

    pub fn finest_error(&self) -> f64 {
        *self.max_rel_errors.last().expect("nonempty study")
    }
}

pub fn explicit_solution_study(a: f64, x_left: f64, x_right: f64, sizes: &[usize]) -> Result<OracleStudy> {
    check_exponent(a)?;
    if sizes.is_empty() {
        return Err(Error::InvalidArgument("no grid sizes".into()));
    }
    let c = explicit_constant(a);
    let mut errors = Vec::with_capacity(sizes.len());
    let mut ratios = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let g = Grid1D::new(x_left, x_right, n)?;
        let op = FracOperator::free(a, &g)?;
        let llt = op.matrix.llt(faer::Side::Lower).map_err(|_| Error::NotPositiveDefinite("free operator".into()))?;
        let u = llt.solve(Mat::from_fn(n, 1, |_, _| c));
        let (x0, r) = (g.center(), g.radius());
        let exact = |x: f64| (r * r - (x - x0) * (x - x0)).powf(a);
        let mut worst = 0.0f64;
        for i in 0..n {
            if g.distance(i + 1)? >= 4.0 * g.h * (1.0 - 1e-12) {
                let e = exact(g.nodes[i]);
                worst = worst.max((u[(i, 0)] - e).abs() / e);
            }
        }
        errors.push(worst);
        ratios.push(u[(0, 0)] / g.h.powf(a) / (2.0 * r).powf(a));
    }
    Ok(OracleStudy { a, sizes: sizes.to_vec(), max_rel_errors: errors, trace_ratio: ratios })
}

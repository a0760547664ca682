//! Python bindings for the `fracheat` core crate.

use std::sync::Arc;

use fracheat::control::{self, ControlConfig};
use fracheat::{heat, operator, traces};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: fracheat::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Grid", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyGrid {
    inner: fracheat::Grid1D,
}

#[pymethods]
impl PyGrid {
    #[new]
    fn new(x_left: f64, x_right: f64, n: usize) -> PyResult<Self> {
        Ok(Self { inner: fracheat::make_grid(x_left, x_right, n).map_err(err)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.h
    }

    #[getter]
    fn nodes(&self) -> Vec<f64> {
        self.inner.nodes.clone()
    }

    fn inner(&self, u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
        self.inner.check_len(&u).map_err(err)?;
        self.inner.check_len(&v).map_err(err)?;
        Ok(self.inner.inner(&u, &v))
    }

    fn __repr__(&self) -> String {
        format!("Grid({}, {}, n={})", self.inner.x_left, self.inner.x_right, self.inner.n)
    }
}

/// Discrete fractional Laplacian plus an optional nodal potential.
#[pyclass(name = "Operator", frozen)]
pub struct PyOperator {
    inner: Arc<fracheat::FracOperator>,
}

#[pymethods]
impl PyOperator {
    #[new]
    #[pyo3(signature = (a, grid, q=None))]
    fn new(a: f64, grid: &PyGrid, q: Option<Vec<f64>>) -> PyResult<Self> {
        let g = &grid.inner;
        let q = match q {
            Some(v) => fracheat::PotentialSpec::new(g, v).map_err(err)?,
            None => fracheat::PotentialSpec::zero(g),
        };
        Ok(Self { inner: Arc::new(fracheat::FracOperator::assemble(a, g, &q).map_err(err)?) })
    }

    #[getter]
    fn a(&self) -> f64 {
        self.inner.a
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid { inner: self.inner.grid.clone() }
    }

    fn apply(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.grid.check_len(&u).map_err(err)?;
        Ok(self.inner.apply(&u))
    }

    fn eigendecompose(&self) -> PyResult<PyBasis> {
        Ok(PyBasis { inner: Arc::new(fracheat::eigendecompose(&self.inner).map_err(err)?) })
    }

    /// Relative residual of the Pohozaev identity for `u`.
    fn pohozaev_residual(&self, u: Vec<f64>) -> PyResult<f64> {
        self.inner.grid.check_len(&u).map_err(err)?;
        let au = self.inner.apply(&u);
        Ok(traces::pohozaev_check(&self.inner, &u, &au, "python").map_err(err)?.residual)
    }
}

#[pyclass(name = "EigenBasis", frozen)]
pub struct PyBasis {
    inner: Arc<fracheat::EigenBasis>,
}

#[pymethods]
impl PyBasis {
    #[getter]
    fn lambdas(&self) -> Vec<f64> {
        self.inner.lambdas.clone()
    }

    /// (left, right) boundary traces φ/d^a per mode.
    #[getter]
    fn traces(&self) -> Vec<(f64, f64)> {
        self.inner.traces.iter().map(|t| (t[0], t[1])).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    /// Mode `k`, 0-based.
    fn mode(&self, k: usize) -> PyResult<Vec<f64>> {
        if k >= self.inner.n() {
            return Err(PyValueError::new_err(format!("mode {k} out of range")));
        }
        Ok(self.inner.mode(k).to_vec())
    }

    fn coefficients(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.coefficients(&u).map_err(err)
    }

    fn synthesize(&self, c: Vec<f64>) -> PyResult<Vec<f64>> {
        if c.len() > self.inner.n() {
            return Err(PyValueError::new_err("more coefficients than modes"));
        }
        Ok(self.inner.synthesize(&c))
    }

    fn solve_initial(&self, f: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
        heat::solve_initial(&self.inner, &f, t).map_err(err)
    }

    /// Returns (passed, min |trace|) over the first `n_max` modes.
    #[pyo3(signature = (n_max=20, tol=1e-3))]
    fn hopf_check(&self, n_max: usize, tol: f64) -> PyResult<(bool, f64)> {
        let r = traces::hopf_check(&self.inner, n_max, tol).map_err(err)?;
        Ok((r.passed(), r.min_abs_trace))
    }

    /// Initial datum steering the state to within `epsilon` of `target` at `t_final`.
    #[pyo3(signature = (target, t_final=1.0, epsilon=0.01))]
    fn control_initial<'py>(&self, py: Python<'py>, target: Vec<f64>, t_final: f64, epsilon: f64) -> PyResult<Bound<'py, PyDict>> {
        let cfg = ControlConfig { t_final, epsilon, ..Default::default() };
        let r = control::control_initial(&self.inner, &target, &cfg).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("control", r.control)?;
        d.set_item("mu", r.mu)?;
        d.set_item("achieved_error", r.achieved_error)?;
        d.set_item("iterations", r.iterations)?;
        Ok(d)
    }
}

/// Max relative error of A⁻¹(c·1) against (R² − (x−x₀)²)^a for each size.
#[pyfunction]
#[pyo3(signature = (a, sizes, x_left=-1.0, x_right=1.0))]
fn explicit_solution_errors(a: f64, sizes: Vec<usize>, x_left: f64, x_right: f64) -> PyResult<Vec<f64>> {
    Ok(operator::explicit_solution_study(a, x_left, x_right, &sizes).map_err(err)?.max_rel_errors)
}

#[pyfunction]
fn kernel_weights(a: f64, count: usize) -> PyResult<Vec<f64>> {
    operator::kernel_weights(a, count).map_err(err)
}

/// Run the command-line tool in-process; returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    let argv = std::iter::once("fracheat".to_string()).chain(args).map(Into::into);
    fracheat::cli::main_with_args(argv)
}

#[pymodule]
fn fracheat_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyOperator>()?;
    m.add_class::<PyBasis>()?;
    m.add_function(wrap_pyfunction!(explicit_solution_errors, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_weights, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

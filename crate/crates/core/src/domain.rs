//! Interval geometry and the uniform interior grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of interior nodes a grid may carry.
pub const MIN_NODES: usize = 4;

/// One of the two boundary points of the interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    /// Outward unit normal.
    pub fn normal(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

/// Uniform grid of `n` interior nodes on `(x_left, x_right)`.
///
/// Node `i` (1-based) sits at `x_left + i h` with `h = (x_right - x_left) / (n + 1)`,
/// so the first and last nodes are one mesh width away from the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub x_left: f64,
    pub x_right: f64,
    pub n: usize,
    pub h: f64,
    pub nodes: Vec<f64>,
}

impl Grid1D {
    pub fn new(x_left: f64, x_right: f64, n: usize) -> Result<Self> {
        if !(x_left.is_finite() && x_right.is_finite()) || x_left >= x_right {
            return Err(Error::InvalidGrid(format!(
                "degenerate interval ({x_left}, {x_right})"
            )));
        }
        if n < MIN_NODES {
            return Err(Error::InvalidGrid(format!(
                "n = {n} below the minimum of {MIN_NODES} interior nodes"
            )));
        }
        let h = (x_right - x_left) / (n as f64 + 1.0);
        let nodes = (1..=n).map(|i| x_left + i as f64 * h).collect();
        Ok(Self { x_left, x_right, n, h, nodes })
    }

    /// The default domain `(-1, 1)`.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new(-1.0, 1.0, n)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn length(&self) -> f64 {
        self.x_right - self.x_left
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.x_left + self.x_right)
    }

    /// R = max |x| over the closed interval.
    pub fn radius(&self) -> f64 {
        self.x_left.abs().max(self.x_right.abs())
    }

    pub fn boundary_point(&self, side: Side) -> f64 {
        match side {
            Side::Left => self.x_left,
            Side::Right => self.x_right,
        }
    }

    /// Distance of 1-based node `i` to the boundary.
    pub fn distance(&self, i: usize) -> Result<f64> {
        if i == 0 || i > self.n {
            return Err(Error::IndexOutOfRange { index: i, n: self.n });
        }
        Ok(self.distance0(i - 1))
    }

    /// Distance of 0-based node `k`, measured in whole mesh widths from the
    /// nearer end so that mirrored nodes agree bit for bit.
    pub(crate) fn distance0(&self, k: usize) -> f64 {
        let steps = (k + 1).min(self.n - k);
        steps as f64 * self.h
    }

    pub fn distances(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.distance0(k)).collect()
    }

    /// Nodes of the side, nearest first, as (0-based index, steps from boundary).
    pub(crate) fn nearest_nodes(&self, side: Side, count: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..=count).map(move |s| match side {
            Side::Left => (s - 1, s),
            Side::Right => (self.n - s, s),
        })
    }

    /// Discrete inner product ⟨u, v⟩_h = h Σ u_i v_i.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), v.len());
        self.h * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).sqrt()
    }

    /// Sample a function at the interior nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }

    pub fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: v.len() });
        }
        Ok(())
    }

    /// Piecewise-linear interpolation of nodal values (zero at both
    /// boundary points and outside the interval).
    pub fn interpolate(&self, u: &[f64], x: f64) -> f64 {
        if x <= self.x_left || x >= self.x_right {
            return 0.0;
        }
        let s = (x - self.x_left) / self.h;
        let k = s.floor() as usize;
        let w = s - k as f64;
        let at = |j: usize| if j == 0 || j > self.n { 0.0 } else { u[j - 1] };
        (1.0 - w) * at(k) + w * at(k + 1)
    }
}

/// Free-function form of [`Grid1D::new`].
pub fn make_grid(x_left: f64, x_right: f64, n: usize) -> Result<Grid1D> {
    Grid1D::new(x_left, x_right, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_coarse_or_degenerate() {
        assert!(make_grid(-1.0, 1.0, 3).is_err());
        assert!(make_grid(1.0, 1.0, 10).is_err());
        assert!(make_grid(2.0, -1.0, 10).is_err());
    }

    #[test]
    fn seven_nodes_on_unit_interval() {
        let g = make_grid(-1.0, 1.0, 7).unwrap();
        assert_eq!(g.h, 0.25);
        let want = [-0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75];
        for (x, w) in g.nodes.iter().zip(want) {
            assert!((x - w).abs() < 1e-15);
        }
        assert_eq!(g.distance(4).unwrap(), 1.0);
        assert_eq!(g.distance(1).unwrap(), g.h);
    }

    #[test]
    fn shifted_interval_distances() {
        let g = make_grid(0.0, 2.0, 7).unwrap();
        assert_eq!(g.distance(1).unwrap(), 0.25);
        assert_eq!(g.distance(7).unwrap(), 0.25);
        assert!(g.distance(0).is_err());
        assert!(g.distance(8).is_err());
    }

    #[test]
    fn mirrored_nodes_share_distance() {
        let g = make_grid(-0.3, 1.7, 20).unwrap();
        for i in 1..=g.n {
            assert_eq!(g.distance(i).unwrap(), g.distance(g.n + 1 - i).unwrap());
        }
    }

    #[test]
    fn midpoint_measure_of_interior() {
        for n in [4usize, 7, 64, 1000] {
            let g = make_grid(-1.0, 1.0, n).unwrap();
            let total: f64 = g.nodes.iter().map(|_| g.h).sum();
            let want = g.length() - g.h;
            assert!((total - want).abs() <= 1e-13 * want, "n = {n}");
        }
    }

    #[test]
    fn interpolation_reproduces_nodes() {
        let g = make_grid(-1.0, 1.0, 9).unwrap();
        let u = g.sample(|x| 1.0 - x * x);
        for (k, &x) in g.nodes.iter().enumerate() {
            assert!((g.interpolate(&u, x) - u[k]).abs() < 1e-14);
        }
        assert_eq!(g.interpolate(&u, -1.0), 0.0);
        assert_eq!(g.interpolate(&u, 1.5), 0.0);
    }
}

//! Numerical laboratory for the fractional heat equation on an interval:
//! lattice discretization of the restricted fractional Laplacian, spectral
//! heat solvers, boundary traces and Pohozaev identities, approximate
//! controls, observability experiments and potential reconstruction.

pub mod cli;
pub mod control;
pub mod domain;
pub mod error;
pub mod heat;
pub mod inverse;
pub mod operator;
pub mod pv;
pub mod quadrature;
pub mod special;
pub mod spectral;
pub mod traces;
pub mod wave;

pub use domain::{make_grid, Grid1D, Side};
pub use error::{Error, Result};
pub use operator::{FracOperator, PotentialSpec};
pub use spectral::{eigendecompose, EigenBasis, ThetaBound};

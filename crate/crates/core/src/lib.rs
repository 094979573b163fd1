//! Numerical laboratory for the classical obstacle problem `Δu = χ_{u>0}`,
//! `u ≥ 0`: structured-grid solvers, monotone blow-up quantities, free
//! boundary classification and an axisymmetric construction of anomalous
//! singular points.

pub mod anomalous;
pub mod classifier;
pub mod error;
pub mod fixtures;
pub mod grid;
pub mod monotonicity;
pub mod quadrature;
pub mod rayleigh;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{AxisymProbe, BoxDomain, CartesianProbe, GridField, Probe, SphereSampleSet};

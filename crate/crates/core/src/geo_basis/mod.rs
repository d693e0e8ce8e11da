//! Tensor-product cubic B-spline surfaces on pruned uniform knot grids.

mod bspline;
mod grid;
mod kernel;
mod system;

pub use bspline::{bspline_1d, bspline_1d_local, n_basis_for_knots, LocalBasis};
pub use grid::{build_knot_grid, Cell, KnotGrid};
pub use kernel::{gp_covariance, gp_covariance_jittered, GpKernelParams, GP_JITTER};
pub use system::{build_basis_system, BasisSystem, PrunedBasis};

use thiserror::Error;

/// A point in the plane. Raw metres or standardized units depending on the
/// caller; the basis code is unit-agnostic.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Location {
    pub east: f64,
    pub north: f64,
}

impl Location {
    pub fn new(east: f64, north: f64) -> Self {
        Self { east, north }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BasisError {
    #[error("knots must be strictly increasing and finite (offending index {0})")]
    InvalidKnots(usize),
    #[error("need at least 2 knots, got {0}")]
    TooFewKnots(usize),
    #[error("derivative order {0} not supported (0, 1 or 2)")]
    InvalidDerivative(usize),
    #[error("x = {x} outside the knot span [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },
    #[error("location {index} ({east}, {north}) lies outside the knot span")]
    LocationOutOfSpan { index: usize, east: f64, north: f64 },
    #[error("degenerate extent: locations have zero spread along the {0} axis")]
    DegenerateExtent(&'static str),
    #[error("need at least 2 distinct locations, got {0}")]
    TooFewLocations(usize),
    #[error("n_east_inner must be at least 4, got {0}")]
    TooFewInnerKnots(usize),
    #[error("non-finite coordinate at location {0}")]
    NonFinite(usize),
    #[error("kernel parameters must be positive and finite (amplitude {amplitude}, length scale {length_scale})")]
    InvalidKernel { amplitude: f64, length_scale: f64 },
}

use serde::{Deserialize, Serialize};

use super::bspline::{bspline_1d_local, n_basis_for_knots};
use super::grid::SPAN_SLACK;
use super::{BasisError, KnotGrid, Location};
use crate::sparse::CsrMatrix;

/// Which tensor-product functions survive pruning, and their column indices.
///
/// Product `(jn, je)` is kept iff its support rectangle touches at least one
/// active cell. Kept functions are numbered in row-major `(north, east)`
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedBasis {
    n_north_fns: usize,
    n_east_fns: usize,
    column: Vec<Option<usize>>,
    kept: Vec<(usize, usize)>,
}

/// Cells (per axis) on which cubic basis function `j` is nonzero.
fn support(j: usize, n_cells: usize) -> std::ops::RangeInclusive<usize> {
    j.saturating_sub(3)..=j.min(n_cells - 1)
}

impl PrunedBasis {
    pub fn new(grid: &KnotGrid) -> Self {
        let n_north_fns = n_basis_for_knots(grid.north_knots.len());
        let n_east_fns = n_basis_for_knots(grid.east_knots.len());
        let active = grid.active_cells();
        let mut column = vec![None; n_north_fns * n_east_fns];
        let mut kept = Vec::new();
        for jn in 0..n_north_fns {
            for je in 0..n_east_fns {
                let sn = support(jn, grid.n_north_cells());
                let se = support(je, grid.n_east_cells());
                let touches = active
                    .iter()
                    .any(|c| sn.contains(&c.north) && se.contains(&c.east));
                if touches {
                    column[jn * n_east_fns + je] = Some(kept.len());
                    kept.push((jn, je));
                }
            }
        }
        Self {
            n_north_fns,
            n_east_fns,
            column,
            kept,
        }
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    /// Products before pruning.
    pub fn n_products(&self) -> usize {
        self.n_north_fns * self.n_east_fns
    }

    pub fn column_of(&self, north_fn: usize, east_fn: usize) -> Option<usize> {
        self.column[north_fn * self.n_east_fns + east_fn]
    }

    /// `(north, east)` per-axis function indices of kept column `l`.
    pub fn factors(&self, l: usize) -> (usize, usize) {
        self.kept[l]
    }

    /// Coefficients `f(ξᴱ, ξᴺ)` at the Greville abscissae. This reproduces any
    /// bilinear function of the coordinates exactly on active cells.
    pub fn greville_coefficients(&self, grid: &KnotGrid, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let gn = greville(&grid.north_knots);
        let ge = greville(&grid.east_knots);
        self.kept.iter().map(|&(jn, je)| f(ge[je], gn[jn])).collect()
    }
}

fn greville(knots: &[f64]) -> Vec<f64> {
    let m = knots.len();
    let t = |j: isize| knots[(j - 3).clamp(0, m as isize - 1) as usize];
    (0..n_basis_for_knots(m) as isize)
        .map(|j| (t(j + 1) + t(j + 2) + t(j + 3)) / 3.0)
        .collect()
}

/// Basis and Laplacian design matrices of a pruned grid at a set of locations.
#[derive(Debug, Clone)]
pub struct BasisSystem {
    pub grid: KnotGrid,
    pub pruned: PrunedBasis,
    /// `n_locations × L`, entries `B_l(x)`.
    pub basis: CsrMatrix,
    /// `n_locations × L`, entries `ΔB_l(x)` divided by `laplacian_divisor`.
    pub laplacian: CsrMatrix,
    pub laplacian_divisor: f64,
}

impl BasisSystem {
    pub fn n_basis(&self) -> usize {
        self.pruned.len()
    }

    pub fn n_locations(&self) -> usize {
        use crate::sparse::LinearOperator;
        self.basis.nrows()
    }

    /// Rescales the stored Laplacian so that it equals `ΔB / divisor`.
    pub fn with_laplacian_divisor(mut self, divisor: f64) -> Self {
        self.laplacian = self.laplacian.scaled(self.laplacian_divisor / divisor);
        self.laplacian_divisor = divisor;
        self
    }

    /// Same system with the Laplacian replaced by zeros.
    pub fn without_laplacian(&self) -> Self {
        use crate::sparse::LinearOperator;
        let mut out = self.clone();
        out.laplacian = CsrMatrix::zeros(self.laplacian.nrows(), self.laplacian.ncols());
        out
    }
}

/// Evaluates the kept product functions and their Laplacians at one point.
/// Returns `(column, B, ΔB)` triples.
pub(crate) fn evaluate_point(
    grid: &KnotGrid,
    pruned: &PrunedBasis,
    loc: Location,
) -> Option<Vec<(usize, f64, f64)>> {
    let clamp = |x: f64, knots: &[f64]| {
        let (lo, hi) = (knots[0], *knots.last().unwrap());
        let slack = SPAN_SLACK * grid.spacing;
        if x >= lo - slack && x <= hi + slack {
            Some(x.clamp(lo, hi))
        } else {
            None
        }
    };
    let n = clamp(loc.north, &grid.north_knots)?;
    let e = clamp(loc.east, &grid.east_knots)?;
    let bn = bspline_1d_local(&grid.north_knots, n, 0).ok()?;
    let dn = bspline_1d_local(&grid.north_knots, n, 2).ok()?;
    let be = bspline_1d_local(&grid.east_knots, e, 0).ok()?;
    let de = bspline_1d_local(&grid.east_knots, e, 2).ok()?;
    debug_assert_eq!(bn.first, dn.first);
    debug_assert_eq!(be.first, de.first);

    let mut out = Vec::with_capacity(16);
    for a in 0..4 {
        for b in 0..4 {
            let Some(col) = pruned.column_of(bn.first + a, be.first + b) else {
                continue;
            };
            let value = bn.values[a] * be.values[b];
            let lap = dn.values[a] * be.values[b] + bn.values[a] * de.values[b];
            if value != 0.0 || lap != 0.0 {
                out.push((col, value, lap));
            }
        }
    }
    Some(out)
}

/// Assembles `B` and `ΔB` (undivided) for the pruned basis of `grid`.
pub fn build_basis_system(grid: &KnotGrid, locations: &[Location]) -> Result<BasisSystem, BasisError> {
    let pruned = PrunedBasis::new(grid);
    let mut b_rows = Vec::with_capacity(locations.len());
    let mut l_rows = Vec::with_capacity(locations.len());
    for (index, loc) in locations.iter().enumerate() {
        let entries = evaluate_point(grid, &pruned, *loc).ok_or(BasisError::LocationOutOfSpan {
            index,
            east: loc.east,
            north: loc.north,
        })?;
        b_rows.push(entries.iter().map(|&(c, v, _)| (c, v)).collect());
        l_rows.push(entries.iter().map(|&(c, _, d)| (c, d)).collect());
    }
    let ncols = pruned.len();
    Ok(BasisSystem {
        grid: grid.clone(),
        basis: CsrMatrix::from_rows(ncols, b_rows),
        laplacian: CsrMatrix::from_rows(ncols, l_rows),
        pruned,
        laplacian_divisor: 1.0,
    })
}

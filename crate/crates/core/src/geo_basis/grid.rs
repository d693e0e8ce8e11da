use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{BasisError, Location};

/// Index of one `x0 × x0` block of the knot grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub north: usize,
    pub east: usize,
}

/// Uniform knot grid with the set of blocks retained after pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotGrid {
    pub north_knots: Vec<f64>,
    pub east_knots: Vec<f64>,
    pub spacing: f64,
    active: Vec<bool>,
}

impl KnotGrid {
    /// Grid with every cell active.
    pub fn full(north_knots: Vec<f64>, east_knots: Vec<f64>, spacing: f64) -> Self {
        let n = (north_knots.len() - 1) * (east_knots.len() - 1);
        Self {
            north_knots,
            east_knots,
            spacing,
            active: vec![true; n],
        }
    }

    pub fn with_active_cells(mut self, cells: &BTreeSet<Cell>) -> Self {
        self.active.iter_mut().for_each(|a| *a = false);
        for c in cells {
            let idx = self.cell_index(*c);
            self.active[idx] = true;
        }
        self
    }

    pub fn n_north_cells(&self) -> usize {
        self.north_knots.len() - 1
    }

    pub fn n_east_cells(&self) -> usize {
        self.east_knots.len() - 1
    }

    /// Inner knots exclude the two boundary knots of each axis.
    pub fn n_north_inner(&self) -> usize {
        self.north_knots.len() - 2
    }

    pub fn n_east_inner(&self) -> usize {
        self.east_knots.len() - 2
    }

    fn cell_index(&self, c: Cell) -> usize {
        c.north * self.n_east_cells() + c.east
    }

    pub fn is_active(&self, c: Cell) -> bool {
        self.active[self.cell_index(c)]
    }

    pub fn active_cells(&self) -> BTreeSet<Cell> {
        let ne = self.n_east_cells();
        self.active
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(i, _)| Cell {
                north: i / ne,
                east: i % ne,
            })
            .collect()
    }

    /// Cell containing a point, or `None` outside the knot span.
    pub fn cell_of(&self, loc: Location) -> Option<Cell> {
        Some(Cell {
            north: axis_cell(&self.north_knots, self.spacing, loc.north)?,
            east: axis_cell(&self.east_knots, self.spacing, loc.east)?,
        })
    }

    pub fn contains(&self, loc: Location) -> bool {
        self.cell_of(loc).is_some()
    }
}

/// Slack allowed at the span ends, as a fraction of the spacing.
pub(crate) const SPAN_SLACK: f64 = 1e-9;

fn axis_cell(knots: &[f64], spacing: f64, x: f64) -> Option<usize> {
    let lo = knots[0];
    let hi = *knots.last().unwrap();
    let slack = SPAN_SLACK * spacing;
    if !(x >= lo - slack && x <= hi + slack) {
        return None;
    }
    let n = knots.len() - 1;
    let p = knots.partition_point(|&k| k <= x);
    Some(p.saturating_sub(1).min(n - 1))
}

/// Places a uniform grid over the locations, with `n_east_inner` inner knots
/// across the east extent, prunes blocks containing no location and fills
/// the retained set out to its convex hull.
pub fn build_knot_grid(locations: &[Location], n_east_inner: usize) -> Result<KnotGrid, BasisError> {
    if n_east_inner < 4 {
        return Err(BasisError::TooFewInnerKnots(n_east_inner));
    }
    for (i, l) in locations.iter().enumerate() {
        if !(l.east.is_finite() && l.north.is_finite()) {
            return Err(BasisError::NonFinite(i));
        }
    }
    let distinct: BTreeSet<(u64, u64)> = locations
        .iter()
        .map(|l| (l.east.to_bits(), l.north.to_bits()))
        .collect();
    if distinct.len() < 2 {
        return Err(BasisError::TooFewLocations(distinct.len()));
    }
    let (e_min, e_max) = min_max(locations.iter().map(|l| l.east));
    let (n_min, n_max) = min_max(locations.iter().map(|l| l.north));
    if e_max <= e_min {
        return Err(BasisError::DegenerateExtent("east"));
    }
    if n_max <= n_min {
        return Err(BasisError::DegenerateExtent("north"));
    }

    let n_east_cells = n_east_inner + 1;
    let spacing = (e_max - e_min) / n_east_cells as f64;
    let n_north_cells = (((n_max - n_min) / spacing) * (1.0 - 1e-12)).ceil().max(1.0) as usize;

    let east_knots: Vec<f64> = (0..=n_east_cells).map(|k| e_min + k as f64 * spacing).collect();
    let north_knots: Vec<f64> = (0..=n_north_cells).map(|k| n_min + k as f64 * spacing).collect();
    let grid = KnotGrid::full(north_knots, east_knots, spacing);

    let occupied: BTreeSet<Cell> = locations
        .iter()
        .map(|l| grid.cell_of(*l).expect("grid spans every location"))
        .collect();
    let active = hull_completion(&occupied, grid.n_north_cells(), grid.n_east_cells());
    Ok(grid.with_active_cells(&active))
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)))
}

/// Every cell whose center lies inside or on the convex hull of the centers
/// of `occupied`.
fn hull_completion(occupied: &BTreeSet<Cell>, n_north: usize, n_east: usize) -> BTreeSet<Cell> {
    // doubled center coordinates keep everything in exact integers
    let center = |c: &Cell| (2 * c.east as i64 + 1, 2 * c.north as i64 + 1);
    let pts: Vec<(i64, i64)> = occupied.iter().map(center).collect();
    let hull = monotone_chain(pts);

    let mut out = BTreeSet::new();
    for north in 0..n_north {
        for east in 0..n_east {
            let c = Cell { north, east };
            if occupied.contains(&c) || in_hull(&hull, center(&c)) {
                out.insert(c);
            }
        }
    }
    out
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise hull without collinear points.
fn monotone_chain(mut pts: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn on_segment(a: (i64, i64), b: (i64, i64), p: (i64, i64)) -> bool {
    cross(a, b, p) == 0
        && p.0 >= a.0.min(b.0)
        && p.0 <= a.0.max(b.0)
        && p.1 >= a.1.min(b.1)
        && p.1 <= a.1.max(b.1)
}

fn in_hull(hull: &[(i64, i64)], p: (i64, i64)) -> bool {
    match hull.len() {
        0 => false,
        1 => hull[0] == p,
        2 => on_segment(hull[0], hull[1], p),
        n => (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= 0),
    }
}

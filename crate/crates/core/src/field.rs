//! Staggered field storage, difference and interpolation operators, discrete inner products.
//!
//! Every field lives on a [`Lattice`]: a choice of [`Stagger`] per axis. Along one axis a
//! field either sits on the nodes `x_0..x_N`, on the cell midpoints `x_{1/2}..x_{N-1/2}`, or on
//! the midpoints plus the two wall positions `x_0` and `x_N` ([`Stagger::Walled`]). The walled
//! variant stores the tangential boundary values that the dual difference reads next to a wall,
//! where the half-cell node width `h_0 = h_{1/2}/2` makes the stencil land on the wall itself.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{Axis, Axis1D, StaggeredGrid2D};

/// Placement of values along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stagger {
    /// `x_i`, `0 <= i <= N`.
    Node,
    /// `x_{m+1/2}`, `0 <= m < N`.
    Cell,
    /// Wall value at `x_0`, the `N` midpoints, wall value at `x_N` (storage index `m + 1` for cell `m`).
    Walled,
}

impl Stagger {
    pub fn len(self, cells: usize) -> usize {
        match self {
            Stagger::Node => cells + 1,
            Stagger::Cell => cells,
            Stagger::Walled => cells + 2,
        }
    }

    fn is_cellwise(self) -> bool {
        matches!(self, Stagger::Cell | Stagger::Walled)
    }

    /// Coordinate of storage index `idx`.
    pub fn position(self, axis: &Axis1D, idx: usize) -> f64 {
        match self {
            Stagger::Node => axis.node(idx),
            Stagger::Cell => axis.midpoint(idx),
            Stagger::Walled => {
                if idx == 0 {
                    axis.start()
                } else if idx == axis.cells() + 1 {
                    axis.end()
                } else {
                    axis.midpoint(idx - 1)
                }
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Stagger::Node => "node",
            Stagger::Cell => "cell",
            Stagger::Walled => "walled",
        }
    }
}

/// Pair of staggers, one per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Lattice {
    pub x: Stagger,
    pub y: Stagger,
}

impl Lattice {
    /// `u^x` at `(x_i, y_{j+1/2})` with wall rows at `y_0`, `y_N`.
    pub const X_VELOCITY: Lattice = Lattice::new(Stagger::Node, Stagger::Walled);
    /// `u^y` at `(x_{i+1/2}, y_j)` with wall columns at `x_0`, `x_N`.
    pub const Y_VELOCITY: Lattice = Lattice::new(Stagger::Walled, Stagger::Node);
    /// Cell centers `(x_{i+1/2}, y_{j+1/2})`.
    pub const CELL: Lattice = Lattice::new(Stagger::Cell, Stagger::Cell);
    /// Cell corners `(x_i, y_j)`.
    pub const CORNER: Lattice = Lattice::new(Stagger::Node, Stagger::Node);
    /// `(x_i, y_{j+1/2})` without wall rows.
    pub const X_EDGE: Lattice = Lattice::new(Stagger::Node, Stagger::Cell);
    /// `(x_{i+1/2}, y_j)` without wall columns.
    pub const Y_EDGE: Lattice = Lattice::new(Stagger::Cell, Stagger::Node);

    pub const fn new(x: Stagger, y: Stagger) -> Self {
        Self { x, y }
    }

    pub fn along(self, axis: Axis) -> Stagger {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
        }
    }

    fn with(self, axis: Axis, s: Stagger) -> Self {
        match axis {
            Axis::X => Self { x: s, ..self },
            Axis::Y => Self { y: s, ..self },
        }
    }

    pub fn shape(self, grid: &StaggeredGrid2D) -> (usize, usize) {
        (self.x.len(grid.nx()), self.y.len(grid.ny()))
    }

    pub fn label(self) -> String {
        match self {
            Lattice::X_VELOCITY => "x_velocity".into(),
            Lattice::Y_VELOCITY => "y_velocity".into(),
            Lattice::CELL => "cell".into(),
            Lattice::CORNER => "corner".into(),
            Lattice::X_EDGE => "x_edge".into(),
            Lattice::Y_EDGE => "y_edge".into(),
            other => format!("{}-{}", other.x.name(), other.y.name()),
        }
    }
}

/// Dense values on one lattice, indexed `(i, j)` by storage index along x and y.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2 {
    lattice: Lattice,
    shape: (usize, usize),
    values: Vec<f64>,
}

impl Field2 {
    pub fn zeros(grid: &StaggeredGrid2D, lattice: Lattice) -> Self {
        let shape = lattice.shape(grid);
        Self {
            lattice,
            shape,
            values: vec![0.0; shape.0 * shape.1],
        }
    }

    /// Samples `f` at every storage position, walls included.
    pub fn from_fn(grid: &StaggeredGrid2D, lattice: Lattice, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(grid, lattice);
        for i in 0..out.shape.0 {
            let x = lattice.x.position(&grid.x, i);
            for j in 0..out.shape.1 {
                let y = lattice.y.position(&grid.y, j);
                out.set(i, j, f(x, y));
            }
        }
        out
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.shape.1 + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.shape.1 + j] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.shape.1 + j] += v;
    }

    /// Errors unless this field matches `lattice` on `grid`.
    pub fn expect_lattice(&self, grid: &StaggeredGrid2D, lattice: Lattice) -> Result<()> {
        if self.lattice != lattice {
            return Err(Error::lattice(format!(
                "expected {}, got {}",
                lattice.label(),
                self.lattice.label()
            )));
        }
        self.expect_grid(grid)
    }

    pub fn expect_grid(&self, grid: &StaggeredGrid2D) -> Result<()> {
        let want = self.lattice.shape(grid);
        if self.shape != want {
            return Err(Error::lattice(format!(
                "{} field has shape {:?}, grid needs {:?}",
                self.lattice.label(),
                self.shape,
                want
            )));
        }
        Ok(())
    }

    fn expect_same(&self, other: &Field2) -> Result<()> {
        if self.lattice != other.lattice || self.shape != other.shape {
            return Err(Error::lattice(format!(
                "operands differ: {} {:?} vs {} {:?}",
                self.lattice.label(),
                self.shape,
                other.lattice.label(),
                other.shape
            )));
        }
        Ok(())
    }

    /// Elementwise combination of two fields on the same lattice.
    pub fn zip_map(&self, other: &Field2, f: impl Fn(f64, f64) -> f64) -> Result<Field2> {
        self.expect_same(other)?;
        Ok(Field2 {
            lattice: self.lattice,
            shape: self.shape,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field2 {
        Field2 {
            lattice: self.lattice,
            shape: self.shape,
            values: self.values.iter().map(|&a| f(a)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Field2 {
        self.map(|a| s * a)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Value at logical cell index `m` (or node index) along each axis; walls are skipped.
    #[inline]
    fn logical(&self, i: usize, j: usize) -> f64 {
        let si = if self.lattice.x == Stagger::Walled { i + 1 } else { i };
        let sj = if self.lattice.y == Stagger::Walled { j + 1 } else { j };
        self.get(si, sj)
    }

    /// Converts a cell-staggered axis to its walled form with zero walls, or back.
    pub fn restagger(&self, axis: Axis, to: Stagger) -> Result<Field2> {
        let from = self.lattice.along(axis);
        match (from, to) {
            (a, b) if a == b => Ok(self.clone()),
            (Stagger::Cell, Stagger::Walled) | (Stagger::Walled, Stagger::Cell) => {
                let lattice = self.lattice.with(axis, to);
                let shape = match axis {
                    Axis::X => (to.len(cells_of(from, self.shape.0)), self.shape.1),
                    Axis::Y => (self.shape.0, to.len(cells_of(from, self.shape.1))),
                };
                let mut out = Field2 {
                    lattice,
                    shape,
                    values: vec![0.0; shape.0 * shape.1],
                };
                let (off_in, off_out) = if from == Stagger::Walled { (1, 0) } else { (0, 1) };
                let n = cells_of(from, if axis == Axis::X { self.shape.0 } else { self.shape.1 });
                for m in 0..n {
                    match axis {
                        Axis::X => {
                            for j in 0..shape.1 {
                                out.set(m + off_out, j, self.get(m + off_in, j));
                            }
                        }
                        Axis::Y => {
                            for i in 0..shape.0 {
                                out.set(i, m + off_out, self.get(i, m + off_in));
                            }
                        }
                    }
                }
                Ok(out)
            }
            _ => Err(Error::lattice(format!(
                "cannot restagger {} axis from {} to {}",
                axis_name(axis),
                from.name(),
                to.name()
            ))),
        }
    }
}

fn cells_of(s: Stagger, len: usize) -> usize {
    match s {
        Stagger::Node => len - 1,
        Stagger::Cell => len,
        Stagger::Walled => len - 2,
    }
}

fn axis_name(axis: Axis) -> &'static str {
    match axis {
        Axis::X => "x",
        Axis::Y => "y",
    }
}

/// Reads a cell-staggered line: `m = -1` and `m = N` are the walls (zero for [`Stagger::Cell`]).
#[inline]
fn cell_value(f: &Field2, axis: Axis, m: isize, other: usize, n: usize) -> f64 {
    let s = f.lattice.along(axis);
    let idx = match s {
        Stagger::Walled => (m + 1) as usize,
        _ => {
            if m < 0 || m as usize >= n {
                return 0.0;
            }
            m as usize
        }
    };
    match axis {
        Axis::X => f.get(idx, other),
        Axis::Y => f.get(other, idx),
    }
}

fn check_along(f: &Field2, grid: &StaggeredGrid2D, axis: Axis, ok: &[Stagger], op: &str) -> Result<()> {
    f.expect_grid(grid)?;
    let s = f.lattice.along(axis);
    if !ok.contains(&s) {
        return Err(Error::lattice(format!(
            "{op} along {} needs {:?} input, got {}",
            axis_name(axis),
            ok,
            s.name()
        )));
    }
    Ok(())
}

fn map_axis(
    f: &Field2,
    grid: &StaggeredGrid2D,
    axis: Axis,
    out_stagger: Stagger,
    mut kernel: impl FnMut(&Field2, usize, usize) -> f64,
) -> Field2 {
    let lattice = f.lattice.with(axis, out_stagger);
    let mut out = Field2::zeros(grid, lattice);
    let (n0, n1) = out.shape;
    for a in 0..n0 {
        for b in 0..n1 {
            let (k, other) = match axis {
                Axis::X => (a, b),
                Axis::Y => (b, a),
            };
            out.set(a, b, kernel(f, k, other));
        }
    }
    out
}

#[inline]
fn node_value(f: &Field2, axis: Axis, i: usize, other: usize) -> f64 {
    match axis {
        Axis::X => f.get(i, other),
        Axis::Y => f.get(other, i),
    }
}

/// Node-to-cell difference: `(f_{i+1} - f_i) / h_{i+1/2}`.
pub fn diff_nodes(grid: &StaggeredGrid2D, f: &Field2, axis: Axis) -> Result<Field2> {
    check_along(f, grid, axis, &[Stagger::Node], "node difference")?;
    let ax = grid.axis(axis);
    Ok(map_axis(f, grid, axis, Stagger::Cell, |f, m, o| {
        (node_value(f, axis, m + 1, o) - node_value(f, axis, m, o)) / ax.cell_width(m)
    }))
}

/// Cell-to-node difference: `(f_{i+1/2} - f_{i-1/2}) / h_i`, reading wall values at both ends.
///
/// [`Stagger::Cell`] inputs are read with zero walls.
pub fn diff_cells(grid: &StaggeredGrid2D, f: &Field2, axis: Axis) -> Result<Field2> {
    check_along(f, grid, axis, &[Stagger::Cell, Stagger::Walled], "cell difference")?;
    let ax = grid.axis(axis);
    let n = ax.cells();
    Ok(map_axis(f, grid, axis, Stagger::Node, |f, i, o| {
        let hi = cell_value(f, axis, i as isize, o, n);
        let lo = cell_value(f, axis, i as isize - 1, o, n);
        (hi - lo) / ax.node_width(i)
    }))
}

pub fn d_x(grid: &StaggeredGrid2D, f: &Field2) -> Result<Field2> {
    diff_nodes(grid, f, Axis::X)
}

pub fn d_y(grid: &StaggeredGrid2D, f: &Field2) -> Result<Field2> {
    diff_nodes(grid, f, Axis::Y)
}

pub fn dual_d_x(grid: &StaggeredGrid2D, f: &Field2) -> Result<Field2> {
    diff_cells(grid, f, Axis::X)
}

pub fn dual_d_y(grid: &StaggeredGrid2D, f: &Field2) -> Result<Field2> {
    diff_cells(grid, f, Axis::Y)
}

/// Backward time difference `(new - old) / dt`.
pub fn d_t(new: &Field2, old: &Field2, dt: f64) -> Result<Field2> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    new.zip_map(old, |a, b| (a - b) / dt)
}

/// Rule for interpolating cell values to an interior node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NodeInterp {
    /// Linear interpolant through the two neighbouring midpoints:
    /// `(h_{i-1/2} f_{i+1/2} + h_{i+1/2} f_{i-1/2}) / (2 h_i)`. Exact on linear functions.
    Linear,
    /// Width-weighted average `(h_{i+1/2} f_{i+1/2} + h_{i-1/2} f_{i-1/2}) / (2 h_i)`, the
    /// adjoint of the midpoint average under the discrete inner products. This is what makes
    /// the convective term skew and conservative on non-uniform grids.
    #[default]
    Conservative,
}

/// Node-to-cell interpolation: the arithmetic mean of the two end nodes of each cell.
pub fn average_to_cells(grid: &StaggeredGrid2D, f: &Field2, axis: Axis) -> Result<Field2> {
    check_along(f, grid, axis, &[Stagger::Node], "node-to-cell interpolation")?;
    Ok(map_axis(f, grid, axis, Stagger::Cell, |f, m, o| {
        0.5 * (node_value(f, axis, m, o) + node_value(f, axis, m + 1, o))
    }))
}

/// Cell-to-node interpolation; the two end nodes take the wall values.
pub fn interpolate_to_nodes(
    grid: &StaggeredGrid2D,
    f: &Field2,
    axis: Axis,
    rule: NodeInterp,
) -> Result<Field2> {
    check_along(f, grid, axis, &[Stagger::Cell, Stagger::Walled], "cell-to-node interpolation")?;
    let ax = grid.axis(axis);
    let n = ax.cells();
    Ok(map_axis(f, grid, axis, Stagger::Node, |f, i, o| {
        if i == 0 {
            return cell_value(f, axis, -1, o, n);
        }
        if i == n {
            return cell_value(f, axis, n as isize, o, n);
        }
        let hi = cell_value(f, axis, i as isize, o, n);
        let lo = cell_value(f, axis, i as isize - 1, o, n);
        let (w_lo, w_hi) = (ax.cell_width(i - 1), ax.cell_width(i));
        match rule {
            NodeInterp::Linear => (w_lo * hi + w_hi * lo) / (2.0 * ax.node_width(i)),
            NodeInterp::Conservative => (w_hi * hi + w_lo * lo) / (2.0 * ax.node_width(i)),
        }
    }))
}

/// Summation range along one axis of a discrete inner product.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumRange {
    /// Cells `m = 0..N` weighted by `h_{m+1/2}`.
    Cells,
    /// Nodes `i = 0..=N` weighted by `h_i`.
    AllNodes,
    /// Nodes `i = 1..N-1` weighted by `h_i`.
    InteriorNodes,
}

impl SumRange {
    fn indices_and_weights(self, axis: &Axis1D) -> Vec<(usize, f64)> {
        let n = axis.cells();
        match self {
            SumRange::Cells => (0..n).map(|m| (m, axis.cell_width(m))).collect(),
            SumRange::AllNodes => (0..=n).map(|i| (i, axis.node_width(i))).collect(),
            SumRange::InteriorNodes => (1..n).map(|i| (i, axis.node_width(i))).collect(),
        }
    }

    fn accepts(self, s: Stagger) -> bool {
        match self {
            SumRange::Cells => s.is_cellwise(),
            _ => s == Stagger::Node,
        }
    }
}

/// Weighted sum `sum w_x w_y f g` over the given ranges.
pub fn weighted_dot(
    grid: &StaggeredGrid2D,
    f: &Field2,
    g: &Field2,
    xr: SumRange,
    yr: SumRange,
) -> Result<f64> {
    for h in [f, g] {
        h.expect_grid(grid)?;
        if !xr.accepts(h.lattice.x) || !yr.accepts(h.lattice.y) {
            return Err(Error::lattice(format!(
                "{} field cannot be summed over ({xr:?}, {yr:?})",
                h.lattice.label()
            )));
        }
    }
    let wx = xr.indices_and_weights(&grid.x);
    let wy = yr.indices_and_weights(&grid.y);
    let mut sum = 0.0;
    for &(i, hx) in &wx {
        for &(j, hy) in &wy {
            sum += hx * hy * f.logical(i, j) * g.logical(i, j);
        }
    }
    Ok(sum)
}

/// Largest absolute value over the given ranges.
pub fn max_abs_over(grid: &StaggeredGrid2D, f: &Field2, xr: SumRange, yr: SumRange) -> Result<f64> {
    f.expect_grid(grid)?;
    if !xr.accepts(f.lattice.x) || !yr.accepts(f.lattice.y) {
        return Err(Error::lattice(format!(
            "{} field cannot be scanned over ({xr:?}, {yr:?})",
            f.lattice.label()
        )));
    }
    let mut m = 0.0f64;
    for (i, _) in xr.indices_and_weights(&grid.x) {
        for (j, _) in yr.indices_and_weights(&grid.y) {
            m = m.max(f.logical(i, j).abs());
        }
    }
    Ok(m)
}

/// `(f, g)_{l2,M}` over cell centers.
pub fn ip_m(grid: &StaggeredGrid2D, f: &Field2, g: &Field2) -> Result<f64> {
    weighted_dot(grid, f, g, SumRange::Cells, SumRange::Cells)
}

/// `(f, g)_{l2,T,M}`: interior x nodes, y cells.
pub fn ip_tm(grid: &StaggeredGrid2D, f: &Field2, g: &Field2) -> Result<f64> {
    weighted_dot(grid, f, g, SumRange::InteriorNodes, SumRange::Cells)
}

/// `(f, g)_{l2,M,T}`: x cells, interior y nodes.
pub fn ip_mt(grid: &StaggeredGrid2D, f: &Field2, g: &Field2) -> Result<f64> {
    weighted_dot(grid, f, g, SumRange::Cells, SumRange::InteriorNodes)
}

/// `(f, g)_{l2,T_x}`: all x nodes, interior y nodes.
pub fn ip_tx(grid: &StaggeredGrid2D, f: &Field2, g: &Field2) -> Result<f64> {
    weighted_dot(grid, f, g, SumRange::AllNodes, SumRange::InteriorNodes)
}

/// `(f, g)_{l2,T_y}`: interior x nodes, all y nodes.
pub fn ip_ty(grid: &StaggeredGrid2D, f: &Field2, g: &Field2) -> Result<f64> {
    weighted_dot(grid, f, g, SumRange::InteriorNodes, SumRange::AllNodes)
}

pub fn norm_m(grid: &StaggeredGrid2D, f: &Field2) -> Result<f64> {
    Ok(ip_m(grid, f, f)?.sqrt())
}

/// Velocity pair `(u^x, u^y)` on the x- and y-velocity lattices.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    pub x: Field2,
    pub y: Field2,
}

impl Velocity {
    pub fn zeros(grid: &StaggeredGrid2D) -> Self {
        Self {
            x: Field2::zeros(grid, Lattice::X_VELOCITY),
            y: Field2::zeros(grid, Lattice::Y_VELOCITY),
        }
    }

    /// Samples `u` at the interior unknown positions; wall and boundary entries stay zero.
    pub fn sample(grid: &StaggeredGrid2D, u: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let mut v = Self::zeros(grid);
        let (nx, ny) = (grid.nx(), grid.ny());
        for i in 1..nx {
            for j in 0..ny {
                v.x.set(i, j + 1, u(grid.x.node(i), grid.y.midpoint(j)).0);
            }
        }
        for i in 0..nx {
            for j in 1..ny {
                v.y.set(i + 1, j, u(grid.x.midpoint(i), grid.y.node(j)).1);
            }
        }
        v
    }

    pub fn check(&self, grid: &StaggeredGrid2D) -> Result<()> {
        self.x.expect_lattice(grid, Lattice::X_VELOCITY)?;
        self.y.expect_lattice(grid, Lattice::Y_VELOCITY)
    }

    /// Zeros every boundary entry (normal-wall nodes and tangential wall rows).
    pub fn enforce_no_slip(&mut self) {
        let (sx0, sx1) = self.x.shape();
        for j in 0..sx1 {
            self.x.set(0, j, 0.0);
            self.x.set(sx0 - 1, j, 0.0);
        }
        for i in 0..sx0 {
            self.x.set(i, 0, 0.0);
            self.x.set(i, sx1 - 1, 0.0);
        }
        let (sy0, sy1) = self.y.shape();
        for i in 0..sy0 {
            self.y.set(i, 0, 0.0);
            self.y.set(i, sy1 - 1, 0.0);
        }
        for j in 0..sy1 {
            self.y.set(0, j, 0.0);
            self.y.set(sy0 - 1, j, 0.0);
        }
    }

    pub fn zip_map(&self, other: &Velocity, f: impl Fn(f64, f64) -> f64 + Copy) -> Result<Velocity> {
        Ok(Velocity {
            x: self.x.zip_map(&other.x, f)?,
            y: self.y.zip_map(&other.y, f)?,
        })
    }

    pub fn sub(&self, other: &Velocity) -> Result<Velocity> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scaled(&self, s: f64) -> Velocity {
        Velocity {
            x: self.x.scaled(s),
            y: self.y.scaled(s),
        }
    }

    /// `(u, v)_{l2} = (u^x, v^x)_{l2,T,M} + (u^y, v^y)_{l2,M,T}`.
    pub fn dot(&self, grid: &StaggeredGrid2D, other: &Velocity) -> Result<f64> {
        Ok(ip_tm(grid, &self.x, &other.x)? + ip_mt(grid, &self.y, &other.y)?)
    }

    pub fn norm(&self, grid: &StaggeredGrid2D) -> Result<f64> {
        Ok(self.dot(grid, self)?.sqrt())
    }

    /// Max absolute value over the interior unknowns of both components.
    pub fn max_abs_interior(&self, grid: &StaggeredGrid2D) -> Result<f64> {
        Ok(max_abs_over(grid, &self.x, SumRange::InteriorNodes, SumRange::Cells)?
            .max(max_abs_over(grid, &self.y, SumRange::Cells, SumRange::InteriorNodes)?))
    }
}

/// Discrete l2 norm of a velocity.
pub fn norm_velocity(grid: &StaggeredGrid2D, u: &Velocity) -> Result<f64> {
    u.norm(grid)
}

/// Discrete H1 seminorm:
/// `||d_x u^x||_M^2 + ||D_y u^x||_{T_y}^2 + ||D_x u^y||_{T_x}^2 + ||d_y u^y||_M^2`.
pub fn norm_grad(grid: &StaggeredGrid2D, u: &Velocity) -> Result<f64> {
    u.check(grid)?;
    let dxux = d_x(grid, &u.x)?;
    let dyux = dual_d_y(grid, &u.x)?;
    let dxuy = dual_d_x(grid, &u.y)?;
    let dyuy = d_y(grid, &u.y)?;
    let s = ip_m(grid, &dxux, &dxux)?
        + ip_ty(grid, &dyux, &dyux)?
        + ip_tx(grid, &dxuy, &dxuy)?
        + ip_m(grid, &dyuy, &dyuy)?;
    Ok(s.sqrt())
}

/// Max norm of a field over its natural unknown range: interior nodes and all cells.
pub fn norm_linf(grid: &StaggeredGrid2D, f: &Field2) -> Result<f64> {
    let range = |s: Stagger| match s {
        Stagger::Node => SumRange::InteriorNodes,
        _ => SumRange::Cells,
    };
    max_abs_over(grid, f, range(f.lattice.x), range(f.lattice.y))
}

/// `d_x u^x + d_y u^y` on cell centers.
pub fn divergence(grid: &StaggeredGrid2D, u: &Velocity) -> Result<Field2> {
    u.check(grid)?;
    let a = d_x(grid, &u.x)?.restagger(Axis::Y, Stagger::Cell)?;
    let b = d_y(grid, &u.y)?.restagger(Axis::X, Stagger::Cell)?;
    a.zip_map(&b, |p, q| p + q)
}

/// Velocity `(d_y psi, -d_x psi)` of a corner stream function.
///
/// Its divergence vanishes identically. Wall values are taken from `psi` as well, so `psi`
/// should be constant along the boundary for a no-slip field.
pub fn discrete_curl(grid: &StaggeredGrid2D, psi: &Field2) -> Result<Velocity> {
    psi.expect_lattice(grid, Lattice::CORNER)?;
    let mut w = Velocity::zeros(grid);
    for i in 0..=grid.nx() {
        for j in 0..grid.ny() {
            w.x.set(i, j + 1, (psi.get(i, j + 1) - psi.get(i, j)) / grid.y.cell_width(j));
        }
    }
    for i in 0..grid.nx() {
        for j in 0..=grid.ny() {
            w.y.set(i + 1, j, -(psi.get(i + 1, j) - psi.get(i, j)) / grid.x.cell_width(i));
        }
    }
    Ok(w)
}

/// Cell-center samples of a scalar.
pub fn sample_cells(grid: &StaggeredGrid2D, f: impl Fn(f64, f64) -> f64) -> Field2 {
    Field2::from_fn(grid, Lattice::CELL, f)
}

/// Mean-zero projection `q - (q, 1)_{l2,M} / |Omega|` of a cell field.
pub fn project_mean_zero(grid: &StaggeredGrid2D, q: &Field2) -> Result<Field2> {
    q.expect_lattice(grid, Lattice::CELL)?;
    let one = Field2::from_fn(grid, Lattice::CELL, |_, _| 1.0);
    let mean = ip_m(grid, q, &one)? / grid.area();
    Ok(q.map(|v| v - mean))
}

/// Writes fields as CSV rows `lattice,i,j,x,y,value` (storage indices, physical coordinates).
pub fn write_fields_csv<W: Write>(grid: &StaggeredGrid2D, fields: &[&Field2], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lattice", "i", "j", "x", "y", "value"])?;
    for f in fields {
        f.expect_grid(grid)?;
        let label = f.lattice.label();
        for i in 0..f.shape.0 {
            let x = f.lattice.x.position(&grid.x, i);
            for j in 0..f.shape.1 {
                let y = f.lattice.y.position(&grid.y, j);
                w.write_record([
                    label.clone(),
                    i.to_string(),
                    j.to_string(),
                    format!("{x:?}"),
                    format!("{y:?}"),
                    format!("{:?}", f.get(i, j)),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis1D;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_nonuniform() -> StaggeredGrid2D {
        StaggeredGrid2D::random_nonuniform(5, 6, (1.0, 1.3), 1.8, 5).unwrap()
    }

    fn random_field(grid: &StaggeredGrid2D, lattice: Lattice, seed: u64) -> Field2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = Field2::zeros(grid, lattice);
        for v in f.values_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        f
    }

    #[test]
    fn d_x_of_linear_is_one() {
        let g = grid_nonuniform();
        let f = Field2::from_fn(&g, Lattice::CORNER, |x, _| x);
        let d = d_x(&g, &f).unwrap();
        for v in d.values() {
            assert!((v - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn d_x_of_square_is_sum_of_ends() {
        let x = Axis1D::from_nodes(vec![0.0, 0.3, 1.0]).unwrap();
        let y = Axis1D::uniform(2, 1.0).unwrap();
        let g = StaggeredGrid2D::new(x, y);
        let f = Field2::from_fn(&g, Lattice::CORNER, |x, _| x * x);
        let d = d_x(&g, &f).unwrap();
        assert!((d.get(0, 0) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn dual_of_primal_is_three_point_stencil() {
        let g = StaggeredGrid2D::random_nonuniform(5, 5, (1.0, 1.0), 1.5, 9).unwrap();
        let f = random_field(&g, Lattice::CORNER, 1);
        let dd = dual_d_x(&g, &d_x(&g, &f).unwrap()).unwrap();
        for i in 1..5 {
            for j in 0..=5 {
                let right = (f.get(i + 1, j) - f.get(i, j)) / g.x.cell_width(i);
                let left = (f.get(i, j) - f.get(i - 1, j)) / g.x.cell_width(i - 1);
                let want = (right - left) / g.x.node_width(i);
                assert!((dd.get(i, j) - want).abs() < 1e-12 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn dual_difference_reads_walls() {
        let g = StaggeredGrid2D::uniform(4, 4, (1.0, 1.0)).unwrap();
        let mut u = Field2::zeros(&g, Lattice::X_VELOCITY);
        u.set(2, 1, 1.0); // first cell row
        let d = dual_d_y(&g, &u).unwrap();
        // (u_{1/2} - wall) / k_0 with k_0 = k_{1/2}/2
        assert!((d.get(2, 0) - 1.0 / 0.125).abs() < 1e-12);
        assert!((d.get(2, 1) + 1.0 / 0.25).abs() < 1e-12);
    }

    #[test]
    fn operators_reject_wrong_lattice() {
        let g = grid_nonuniform();
        let p = Field2::zeros(&g, Lattice::CELL);
        assert!(matches!(d_x(&g, &p), Err(Error::Lattice(_))));
        let c = Field2::zeros(&g, Lattice::CORNER);
        assert!(dual_d_x(&g, &c).is_err());
        assert!(average_to_cells(&g, &p, Axis::X).is_err());
        assert!(interpolate_to_nodes(&g, &c, Axis::Y, NodeInterp::Linear).is_err());
        assert!(ip_m(&g, &c, &c).is_err());
        let other = StaggeredGrid2D::uniform(3, 3, (1.0, 1.0)).unwrap();
        assert!(d_x(&other, &c).is_err());
    }

    #[test]
    fn time_difference() {
        let g = grid_nonuniform();
        let a = random_field(&g, Lattice::CELL, 3);
        let z = d_t(&a, &a, 0.1).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        let b = a.map(|v| v + 0.1 * 2.5);
        let c = d_t(&b, &a, 0.1).unwrap();
        for v in c.values() {
            assert!((v - 2.5).abs() < 1e-13);
        }
        let r = random_field(&g, Lattice::CELL, 4);
        let q = d_t(&r, &a, 0.1).unwrap();
        for k in 0..a.values().len() {
            assert_eq!(q.values()[k], (r.values()[k] - a.values()[k]) / 0.1);
        }
        assert!(d_t(&a, &a, 0.0).is_err());
    }

    #[test]
    fn divergence_of_linear_solenoidal_is_zero() {
        let g = grid_nonuniform();
        let mut u = Velocity::zeros(&g);
        u.x = Field2::from_fn(&g, Lattice::X_VELOCITY, |x, _| x);
        u.y = Field2::from_fn(&g, Lattice::Y_VELOCITY, |_, y| -y);
        let div = divergence(&g, &u).unwrap();
        assert!(div.max_abs() < 1e-13);
        assert_eq!(divergence(&g, &Velocity::zeros(&g)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn interpolation_examples() {
        let x = Axis1D::from_nodes(vec![0.0, 0.2, 0.5, 1.0]).unwrap();
        let y = Axis1D::uniform(2, 1.0).unwrap();
        let g = StaggeredGrid2D::new(x, y);
        let f = Field2::from_fn(&g, Lattice::Y_EDGE, |x, _| x * x);
        let lin = interpolate_to_nodes(&g, &f, Axis::X, NodeInterp::Linear).unwrap();
        // weights 0.2/0.5 on (0.35)^2 and 0.3/0.5 on (0.1)^2
        assert!((lin.get(1, 0) - 0.055).abs() < 1e-15);
        let cons = interpolate_to_nodes(&g, &f, Axis::X, NodeInterp::Conservative).unwrap();
        assert!((cons.get(1, 0) - (0.3 * 0.1225 + 0.2 * 0.01) / 0.5).abs() < 1e-15);

        let n = Field2::from_fn(&g, Lattice::CORNER, |x, _| x);
        let mid = average_to_cells(&g, &n, Axis::X).unwrap();
        for m in 0..3 {
            assert!((mid.get(m, 0) - g.x.midpoint(m)).abs() < 1e-15);
        }
    }

    #[test]
    fn interpolation_on_uniform_grid_is_mean() {
        let g = StaggeredGrid2D::uniform(6, 4, (1.0, 1.0)).unwrap();
        let f = random_field(&g, Lattice::CELL, 8);
        for rule in [NodeInterp::Linear, NodeInterp::Conservative] {
            let n = interpolate_to_nodes(&g, &f, Axis::X, rule).unwrap();
            for i in 1..6 {
                assert!((n.get(i, 1) - 0.5 * (f.get(i, 1) + f.get(i - 1, 1))).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constant_norm_on_unit_square() {
        let g = grid_nonuniform();
        let g = StaggeredGrid2D::new(g.x.clone(), Axis1D::uniform(4, 1.0).unwrap());
        let c = Field2::from_fn(&g, Lattice::CELL, |_, _| 2.0);
        assert!((norm_m(&g, &c).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn mean_zero_projection() {
        let g = grid_nonuniform();
        let q = random_field(&g, Lattice::CELL, 2).map(|v| v + 3.0);
        let p = project_mean_zero(&g, &q).unwrap();
        let one = Field2::from_fn(&g, Lattice::CELL, |_, _| 1.0);
        assert!(ip_m(&g, &p, &one).unwrap().abs() < 1e-14);
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let g = StaggeredGrid2D::uniform(2, 2, (1.0, 1.0)).unwrap();
        let p = Field2::from_fn(&g, Lattice::CELL, |x, y| x + y);
        let mut buf = Vec::new();
        write_fields_csv(&g, &[&p], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("lattice,i,j,x,y,value"));
        assert_eq!(lines.next(), Some("cell,0,0,0.25,0.25,0.5"));
        assert_eq!(text.lines().count(), 5);
    }

    fn lattices() -> impl Strategy<Value = Lattice> {
        prop_oneof![
            Just(Lattice::CELL),
            Just(Lattice::CORNER),
            Just(Lattice::X_VELOCITY),
            Just(Lattice::Y_EDGE)
        ]
    }

    proptest! {
        #[test]
        fn ip_m_symmetric_bilinear(s1 in 0u64..1000, s2 in 0u64..1000, a in -3.0f64..3.0) {
            let g = grid_nonuniform();
            let f = random_field(&g, Lattice::CELL, s1);
            let h = random_field(&g, Lattice::CELL, s2);
            let fh = ip_m(&g, &f, &h).unwrap();
            prop_assert!((fh - ip_m(&g, &h, &f).unwrap()).abs() < 1e-14);
            let af = f.scaled(a);
            let sum = af.zip_map(&h, |p, q| p + q).unwrap();
            let lhs = ip_m(&g, &sum, &h).unwrap();
            let rhs = a * fh + ip_m(&g, &h, &h).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-13);
        }

        #[test]
        fn summation_by_parts(seed in 0u64..1000) {
            let g = StaggeredGrid2D::random_nonuniform(7, 5, (1.0, 1.0), 2.0, seed);
            prop_assume!(g.is_ok());
            let g = g.unwrap();
            // (D_x q, v)_{T,M} = -(q, d_x v)_M for v vanishing at x walls
            let q = random_field(&g, Lattice::CELL, seed + 1);
            let mut v = random_field(&g, Lattice::X_VELOCITY, seed + 2);
            let mut w = random_field(&g, Lattice::Y_VELOCITY, seed + 3);
            let mut u = Velocity { x: v.clone(), y: w.clone() };
            u.enforce_no_slip();
            v = u.x.clone();
            w = u.y.clone();
            let lhs = ip_tm(&g, &dual_d_x(&g, &q).unwrap(), &v).unwrap();
            let dv = d_x(&g, &v).unwrap().restagger(Axis::Y, Stagger::Cell).unwrap();
            let rhs = -ip_m(&g, &q, &dv).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(1.0));

            let lhs = ip_mt(&g, &dual_d_y(&g, &q).unwrap(), &w).unwrap();
            let dw = d_y(&g, &w).unwrap().restagger(Axis::X, Stagger::Cell).unwrap();
            let rhs = -ip_m(&g, &q, &dw).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(1.0));
        }

        #[test]
        fn operators_annihilate_constants_and_are_exact_on_linears(
            seed in 0u64..500, a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0
        ) {
            let g = StaggeredGrid2D::random_nonuniform(6, 7, (1.0, 1.0), 1.7, seed);
            prop_assume!(g.is_ok());
            let g = g.unwrap();
            let lin = |x: f64, y: f64| a + b * x + c * y;
            let n = Field2::from_fn(&g, Lattice::CORNER, lin);
            let cl = Field2::from_fn(&g, Lattice::CELL, lin);
            for v in d_x(&g, &n).unwrap().values() { prop_assert!((v - b).abs() < 1e-12); }
            for v in d_y(&g, &n).unwrap().values() { prop_assert!((v - c).abs() < 1e-12); }
            let dx = dual_d_x(&g, &cl).unwrap();
            let dy = dual_d_y(&g, &cl).unwrap();
            for i in 1..6 { for j in 0..7 { prop_assert!((dx.get(i, j) - b).abs() < 1e-12); } }
            for i in 0..6 { for j in 1..7 { prop_assert!((dy.get(i, j) - c).abs() < 1e-12); } }
            let k = Field2::from_fn(&g, Lattice::CELL, |_, _| a);
            for i in 1..6 { for j in 0..7 { prop_assert!(dual_d_x(&g, &k).unwrap().get(i, j).abs() < 1e-12); } }

            let lin_nodes = interpolate_to_nodes(&g, &cl, Axis::X, NodeInterp::Linear).unwrap();
            for i in 1..6 { for j in 0..7 {
                prop_assert!((lin_nodes.get(i, j) - lin(g.x.node(i), g.y.midpoint(j))).abs() < 1e-12);
            } }
            let mid = average_to_cells(&g, &n, Axis::Y).unwrap();
            for i in 0..=6 { for j in 0..7 {
                prop_assert!((mid.get(i, j) - lin(g.x.node(i), g.y.midpoint(j))).abs() < 1e-12);
            } }
        }

        #[test]
        fn velocity_norms_are_seminorms(s1 in 0u64..500, s2 in 0u64..500, a in -4.0f64..4.0) {
            let g = grid_nonuniform();
            let mk = |s| {
                let mut u = Velocity {
                    x: random_field(&g, Lattice::X_VELOCITY, s),
                    y: random_field(&g, Lattice::Y_VELOCITY, s + 7),
                };
                u.enforce_no_slip();
                u
            };
            let u = mk(s1);
            let v = mk(s2);
            let sum = u.zip_map(&v, |p, q| p + q).unwrap();
            for norm in [norm_velocity, norm_grad] {
                let nu = norm(&g, &u).unwrap();
                prop_assert!((norm(&g, &u.scaled(a)).unwrap() - a.abs() * nu).abs() < 1e-12 * (1.0 + nu));
                prop_assert!(norm(&g, &sum).unwrap() <= nu + norm(&g, &v).unwrap() + 1e-12);
            }
        }

        #[test]
        fn restagger_round_trip(l in lattices(), seed in 0u64..100) {
            let g = grid_nonuniform();
            let f = random_field(&g, l, seed);
            for axis in [Axis::X, Axis::Y] {
                if l.along(axis) == Stagger::Cell {
                    let w = f.restagger(axis, Stagger::Walled).unwrap();
                    prop_assert_eq!(w.restagger(axis, Stagger::Cell).unwrap(), f.clone());
                }
            }
        }
    }
}

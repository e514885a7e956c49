//! Non-uniform tensor-product staggered grids.
//!
//! An axis is a strictly increasing partition `x_0 < x_1 < ... < x_N`. Besides the
//! nodes it carries the cell widths `h_{i+1/2} = x_{i+1} - x_i`, the cell midpoints
//! `x_{i+1/2}`, and the dual widths `h_i = (h_{i+1/2} + h_{i-1/2}) / 2`, which at the two
//! ends collapse to half a cell (`h_0 = h_{1/2} / 2`, `h_N = h_{N-1/2} / 2`).

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Coordinate direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
}

/// One-dimensional partition with all derived spacings.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis1D {
    nodes: Vec<f64>,
    cell_widths: Vec<f64>,
    midpoints: Vec<f64>,
    node_widths: Vec<f64>,
}

impl Axis1D {
    /// Builds an axis from its node coordinates. At least two cells are required.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::Grid(format!(
                "an axis needs at least 2 cells, got {}",
                nodes.len().saturating_sub(1)
            )));
        }
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::Grid("non-finite node coordinate".into()));
        }
        let cell_widths: Vec<f64> = nodes.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(pos) = cell_widths.iter().position(|&h| h <= 0.0) {
            return Err(Error::Grid(format!(
                "nodes must be strictly increasing (violated between node {pos} and {})",
                pos + 1
            )));
        }
        let midpoints = nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let n = cell_widths.len();
        let mut node_widths = Vec::with_capacity(n + 1);
        node_widths.push(cell_widths[0] / 2.0);
        for i in 1..n {
            node_widths.push((cell_widths[i] + cell_widths[i - 1]) / 2.0);
        }
        node_widths.push(cell_widths[n - 1] / 2.0);
        Ok(Self {
            nodes,
            cell_widths,
            midpoints,
            node_widths,
        })
    }

    pub fn uniform(cells: usize, length: f64) -> Result<Self> {
        if cells < 2 {
            return Err(Error::Grid(format!("need at least 2 cells, got {cells}")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::Grid(format!("length must be positive, got {length}")));
        }
        let h = length / cells as f64;
        let mut nodes: Vec<f64> = (0..=cells).map(|i| i as f64 * h).collect();
        nodes[cells] = length;
        Self::from_nodes(nodes)
    }

    /// Random partition whose max/min cell-width ratio is at least `target_ratio`.
    ///
    /// Widths are drawn as `1 + r * xi` with `xi ~ U[0, 1)` and rescaled to `length`;
    /// `r` is chosen so the realized ratio reaches the target.
    pub fn random(cells: usize, length: f64, target_ratio: f64, rng: &mut impl Rng) -> Result<Self> {
        if cells < 2 {
            return Err(Error::Grid(format!("need at least 2 cells, got {cells}")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::Grid(format!("length must be positive, got {length}")));
        }
        if !(target_ratio >= 1.0 && target_ratio.is_finite()) {
            return Err(Error::Grid(format!("target ratio must be >= 1, got {target_ratio}")));
        }
        let xi: Vec<f64> = (0..cells).map(|_| rng.gen::<f64>()).collect();
        let xi_max = xi.iter().copied().fold(f64::MIN, f64::max);
        let xi_min = xi.iter().copied().fold(f64::MAX, f64::min);

        let mut r = if target_ratio == 1.0 {
            0.0
        } else {
            let denom = xi_max - target_ratio * xi_min;
            if denom <= 0.0 {
                return Err(Error::Grid(format!(
                    "ratio {target_ratio} is infeasible for {cells} cells with this seed \
                     (largest reachable ratio {:.4})",
                    if xi_min > 0.0 { xi_max / xi_min } else { f64::INFINITY }
                )));
            }
            (target_ratio - 1.0) / denom
        };

        for _ in 0..64 {
            let widths: Vec<f64> = xi.iter().map(|&v| 1.0 + r * v).collect();
            let total: f64 = widths.iter().sum();
            let mut nodes = Vec::with_capacity(cells + 1);
            let mut acc = 0.0;
            nodes.push(0.0);
            for w in &widths[..cells - 1] {
                acc += w;
                nodes.push(acc / total * length);
            }
            nodes.push(length);
            let axis = Self::from_nodes(nodes)?;
            if axis.width_ratio() >= target_ratio {
                return Ok(axis);
            }
            // Rounding in the rescale can land a hair under the target.
            r *= 1.0 + 1e-12;
            r += 1e-15;
        }
        Err(Error::Grid(format!("could not realize ratio {target_ratio}")))
    }

    /// Number of cells `N`.
    pub fn cells(&self) -> usize {
        self.cell_widths.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// `x_i`, `0 <= i <= N`.
    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// `x_{m+1/2}`.
    pub fn midpoint(&self, m: usize) -> f64 {
        self.midpoints[m]
    }

    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }

    /// `h_{m+1/2}`.
    pub fn cell_width(&self, m: usize) -> f64 {
        self.cell_widths[m]
    }

    pub fn cell_widths(&self) -> &[f64] {
        &self.cell_widths
    }

    /// `h_i`, halved at both ends.
    pub fn node_width(&self, i: usize) -> f64 {
        self.node_widths[i]
    }

    pub fn node_widths(&self) -> &[f64] {
        &self.node_widths
    }

    pub fn start(&self) -> f64 {
        self.nodes[0]
    }

    pub fn end(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn length(&self) -> f64 {
        self.end() - self.start()
    }

    pub fn max_width(&self) -> f64 {
        self.cell_widths.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_width(&self) -> f64 {
        self.cell_widths.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// max/min cell width along this axis.
    pub fn width_ratio(&self) -> f64 {
        self.max_width() / self.min_width()
    }

    /// Splits every cell in two at its midpoint.
    pub fn refined(&self) -> Self {
        let mut nodes = Vec::with_capacity(2 * self.cells() + 1);
        for m in 0..self.cells() {
            nodes.push(self.nodes[m]);
            nodes.push(self.midpoints[m]);
        }
        nodes.push(self.end());
        Self::from_nodes(nodes).expect("refinement of a valid axis is valid")
    }
}

/// Tensor-product staggered grid on a rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct StaggeredGrid2D {
    pub x: Axis1D,
    pub y: Axis1D,
}

impl StaggeredGrid2D {
    pub fn new(x: Axis1D, y: Axis1D) -> Self {
        Self { x, y }
    }

    pub fn uniform(nx: usize, ny: usize, lengths: (f64, f64)) -> Result<Self> {
        Ok(Self::new(
            Axis1D::uniform(nx, lengths.0)?,
            Axis1D::uniform(ny, lengths.1)?,
        ))
    }

    /// Seeded random non-uniform grid; the x axis is drawn before the y axis from one stream.
    pub fn random_nonuniform(
        nx: usize,
        ny: usize,
        lengths: (f64, f64),
        target_ratio: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Axis1D::random(nx, lengths.0, target_ratio, &mut rng)?;
        let y = Axis1D::random(ny, lengths.1, target_ratio, &mut rng)?;
        Ok(Self::new(x, y))
    }

    pub fn axis(&self, axis: Axis) -> &Axis1D {
        match axis {
            Axis::X => &self.x,
            Axis::Y => &self.y,
        }
    }

    pub fn nx(&self) -> usize {
        self.x.cells()
    }

    pub fn ny(&self) -> usize {
        self.y.cells()
    }

    pub fn lengths(&self) -> (f64, f64) {
        (self.x.length(), self.y.length())
    }

    pub fn area(&self) -> f64 {
        self.x.length() * self.y.length()
    }

    /// Admissible regularity constant: smallest cell width over the largest, across both axes.
    pub fn regularity_ratio(&self) -> f64 {
        let min = self.x.min_width().min(self.y.min_width());
        let max = self.x.max_width().max(self.y.max_width());
        min / max
    }

    /// Largest cell width over both axes.
    pub fn mesh_size(&self) -> f64 {
        self.x.max_width().max(self.y.max_width())
    }

    pub fn refined(&self) -> Self {
        Self::new(self.x.refined(), self.y.refined())
    }

    /// Two lines of space-separated node coordinates, x axis first.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for axis in [&self.x, &self.y] {
            let line: Vec<String> = axis.nodes().iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut parse_line = |name: &str| -> Result<Axis1D> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Grid(format!("missing {name} axis line")))?;
            let nodes = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|e| Error::Grid(format!("bad coordinate {tok:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            Axis1D::from_nodes(nodes)
        };
        let x = parse_line("x")?;
        let y = parse_line("y")?;
        if lines.next().is_some() {
            return Err(Error::Grid("trailing content after the two axis lines".into()));
        }
        Ok(Self::new(x, y))
    }

    pub fn write_text(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_text(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_spacings() {
        let g = StaggeredGrid2D::uniform(4, 4, (1.0, 1.0)).unwrap();
        for m in 0..4 {
            assert_eq!(g.x.cell_width(m), 0.25);
        }
        assert_eq!(g.x.node_width(0), 0.125);
        assert_eq!(g.x.node_width(1), 0.25);
        assert_eq!(g.x.node_width(4), 0.125);
    }

    #[test]
    fn unknown_counts_on_five_by_five() {
        let g = StaggeredGrid2D::uniform(5, 5, (1.0, 1.0)).unwrap();
        assert_eq!(g.nx() * g.ny(), 25);
        // interior u^x columns are i = 1..N_x-1, each with N_y cells
        assert_eq!((g.nx() - 1, g.ny()), (4, 5));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(StaggeredGrid2D::uniform(1, 4, (1.0, 1.0)).is_err());
        assert!(StaggeredGrid2D::uniform(4, 4, (0.0, 1.0)).is_err());
        assert!(StaggeredGrid2D::uniform(4, 4, (1.0, -2.0)).is_err());
        assert!(Axis1D::from_nodes(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(Axis1D::from_nodes(vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn regularity_of_uniform_and_hand_grid() {
        let g = StaggeredGrid2D::uniform(8, 8, (1.0, 1.0)).unwrap();
        assert_eq!(g.regularity_ratio(), 1.0);

        let x = Axis1D::from_nodes(vec![0.0, 0.2, 0.5, 1.0]).unwrap();
        let y = Axis1D::from_nodes(vec![0.0, 0.5, 1.0]).unwrap();
        let g = StaggeredGrid2D::new(x, y);
        assert!((g.regularity_ratio() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn random_grid_meets_target_ratio() {
        let g = StaggeredGrid2D::random_nonuniform(8, 8, (1.0, 1.0), 1.5, 7).unwrap();
        assert!(g.x.width_ratio() >= 1.5);
        assert!(g.y.width_ratio() >= 1.5);
        // direct scan of all widths
        let all: Vec<f64> = g.x.cell_widths().iter().chain(g.y.cell_widths()).copied().collect();
        let scan = all.iter().copied().fold(f64::INFINITY, f64::min)
            / all.iter().copied().fold(0.0, f64::max);
        assert_eq!(g.regularity_ratio(), scan);
        assert!(g.regularity_ratio() <= 1.0 / 1.5);
    }

    #[test]
    fn random_grid_ratio_one_is_valid() {
        let g = StaggeredGrid2D::random_nonuniform(6, 5, (1.0, 2.0), 1.0, 3).unwrap();
        assert!((g.x.length() - 1.0).abs() < 1e-14);
        assert!((g.y.length() - 2.0).abs() < 1e-14);
        assert!(g.regularity_ratio() > 0.0);
    }

    #[test]
    fn random_grid_is_deterministic() {
        let a = StaggeredGrid2D::random_nonuniform(8, 8, (1.0, 1.0), 1.5, 42).unwrap();
        let b = StaggeredGrid2D::random_nonuniform(8, 8, (1.0, 1.0), 1.5, 42).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let c = StaggeredGrid2D::random_nonuniform(8, 8, (1.0, 1.0), 1.5, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn infeasible_ratio_is_an_error() {
        assert!(StaggeredGrid2D::random_nonuniform(2, 2, (1.0, 1.0), 1e9, 1).is_err());
    }

    #[test]
    fn text_round_trip() {
        let g = StaggeredGrid2D::random_nonuniform(7, 9, (1.0, 1.0), 2.0, 11).unwrap();
        let back = StaggeredGrid2D::from_text(&g.to_text()).unwrap();
        assert_eq!(g, back);
        assert!(StaggeredGrid2D::from_text("0 0.5 1\n").is_err());
    }

    proptest! {
        #[test]
        fn spacings_are_consistent(n in 2usize..40, ratio in 1.0f64..3.0, seed in 0u64..1000) {
            if let Ok(g) = StaggeredGrid2D::random_nonuniform(n, n + 1, (1.0, 1.5), ratio, seed) {
                for axis in [&g.x, &g.y] {
                    let sum: f64 = axis.cell_widths().iter().sum();
                    prop_assert!((sum - axis.length()).abs() <= 1e-14 * axis.length());
                    let n = axis.cells();
                    prop_assert_eq!(axis.node_width(0), axis.cell_width(0) / 2.0);
                    prop_assert_eq!(axis.node_width(n), axis.cell_width(n - 1) / 2.0);
                    for i in 1..n {
                        prop_assert_eq!(
                            axis.node_width(i),
                            (axis.cell_width(i) + axis.cell_width(i - 1)) / 2.0
                        );
                    }
                    prop_assert!(axis.width_ratio() >= ratio);
                }
            }
        }

        #[test]
        fn refinement_preserves_regularity(n in 2usize..20, seed in 0u64..500) {
            let g = StaggeredGrid2D::random_nonuniform(n, n, (1.0, 1.0), 1.5, seed);
            if let Ok(g) = g {
                let r = g.refined();
                prop_assert_eq!(r.nx(), 2 * n);
                prop_assert!((r.regularity_ratio() - g.regularity_ratio()).abs() < 1e-12);
            }
        }
    }
}

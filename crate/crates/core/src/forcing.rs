//! Discrete momentum right-hand sides.
//!
//! The reconstructed scheme replaces the point value `g^x(x_i, y_{j+1/2})` by the line average
//! of `g^x` over the dual interval `[x_{i-1/2}, x_{i+1/2}]` (and `g^y` over `[y_{j-1/2}, y_{j+1/2}]`).
//! For a gradient `g = grad(phi)` the average telescopes to a difference of cell-center values
//! of `phi`, which is exactly what the discrete pressure gradient can absorb.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::Velocity;
use crate::grid::{Axis1D, StaggeredGrid2D};

pub type SpaceFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type SpaceTimeFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// How a forcing is turned into momentum loads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhsMode {
    /// Line averages over dual intervals (RMAC).
    Averaged,
    /// Point samples at the velocity nodes (classical MAC).
    Pointwise,
}

/// One additive piece of a forcing.
#[derive(Clone)]
pub enum ForcingTerm {
    General { gx: SpaceTimeFn, gy: SpaceTimeFn },
    /// `a(t) * (gx(x, y), gy(x, y))`; the spatial loads are cached once per grid.
    Separable { time: TimeFn, gx: SpaceFn, gy: SpaceFn },
    /// `a(t) * grad(phi)`. Averaged loads use the exact difference of `phi` across each dual
    /// interval instead of quadrature; point loads sample `(dx, dy)`.
    Gradient {
        time: TimeFn,
        phi: SpaceFn,
        dx: SpaceFn,
        dy: SpaceFn,
    },
}

impl ForcingTerm {
    fn eval(&self, x: f64, y: f64, t: f64) -> (f64, f64) {
        match self {
            ForcingTerm::General { gx, gy } => (gx(x, y, t), gy(x, y, t)),
            ForcingTerm::Separable { time, gx, gy } => {
                let a = time(t);
                (a * gx(x, y), a * gy(x, y))
            }
            ForcingTerm::Gradient { time, dx, dy, .. } => {
                let a = time(t);
                (a * dx(x, y), a * dy(x, y))
            }
        }
    }

    /// Spatial loads of a time-separable term (without the time factor).
    fn spatial_loads(&self, grid: &StaggeredGrid2D, mode: RhsMode, order: usize) -> Result<Option<(TimeFn, Velocity)>> {
        match self {
            ForcingTerm::General { .. } => Ok(None),
            ForcingTerm::Separable { time, gx, gy } => {
                let loads = assemble_with(grid, mode, order, |x, y| gx(x, y), |x, y| gy(x, y), f64::NAN)?;
                Ok(Some((time.clone(), loads)))
            }
            ForcingTerm::Gradient { time, phi, dx, dy } => {
                let loads = match mode {
                    RhsMode::Averaged => gradient_perturbation(|x, y, _| phi(x, y), grid, f64::NAN),
                    RhsMode::Pointwise => {
                        assemble_with(grid, mode, order, |x, y| dx(x, y), |x, y| dy(x, y), f64::NAN)?
                    }
                };
                Ok(Some((time.clone(), loads)))
            }
        }
    }
}

/// Analytic forcing `g = (g^x, g^y)` together with its reconstruction mode.
#[derive(Clone)]
pub struct ForcingSpec {
    terms: Vec<ForcingTerm>,
    pub mode: RhsMode,
    /// Gauss points per half of each dual interval.
    pub quadrature_order: usize,
}

impl std::fmt::Debug for ForcingSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForcingSpec")
            .field("terms", &self.terms.len())
            .field("mode", &self.mode)
            .field("quadrature_order", &self.quadrature_order)
            .finish()
    }
}

pub const DEFAULT_QUADRATURE_ORDER: usize = 6;

impl ForcingSpec {
    pub fn zero() -> Self {
        Self {
            terms: Vec::new(),
            mode: RhsMode::Averaged,
            quadrature_order: DEFAULT_QUADRATURE_ORDER,
        }
    }

    pub fn new(
        gx: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        gy: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::zero().with_term(ForcingTerm::General {
            gx: Arc::new(gx),
            gy: Arc::new(gy),
        })
    }

    pub fn with_term(mut self, term: ForcingTerm) -> Self {
        self.terms.push(term);
        self
    }

    pub fn with_separable(
        self,
        time: impl Fn(f64) -> f64 + Send + Sync + 'static,
        gx: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        gy: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.with_term(ForcingTerm::Separable {
            time: Arc::new(time),
            gx: Arc::new(gx),
            gy: Arc::new(gy),
        })
    }

    pub fn with_gradient(
        self,
        time: impl Fn(f64) -> f64 + Send + Sync + 'static,
        phi: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        dx: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        dy: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.with_term(ForcingTerm::Gradient {
            time: Arc::new(time),
            phi: Arc::new(phi),
            dx: Arc::new(dx),
            dy: Arc::new(dy),
        })
    }

    /// Adds every term of `other` (its mode and order are ignored).
    pub fn plus(mut self, other: &ForcingSpec) -> Self {
        self.terms.extend(other.terms.iter().cloned());
        self
    }

    pub fn with_mode(mut self, mode: RhsMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_quadrature_order(mut self, order: usize) -> Self {
        self.quadrature_order = order;
        self
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[ForcingTerm] {
        &self.terms
    }

    /// Point value `(g^x, g^y)(x, y, t)`.
    pub fn eval(&self, x: f64, y: f64, t: f64) -> (f64, f64) {
        self.terms.iter().fold((0.0, 0.0), |acc, term| {
            let v = term.eval(x, y, t);
            (acc.0 + v.0, acc.1 + v.1)
        })
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // three-term recurrence for P_n and P_{n-1}
            let (mut pn1, mut pn) = (1.0, z);
            for m in 2..=n {
                let next = ((2 * m - 1) as f64 * z * pn - (m - 1) as f64 * pn1) / m as f64;
                pn1 = pn;
                pn = next;
            }
            dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[k] = -z;
        nodes[n - 1 - k] = z;
        weights[k] = w;
        weights[n - 1 - k] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Composite Gauss rule split at the primal node of each dual interval.
struct DualAverager {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl DualAverager {
    fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("quadrature order must be at least 1"));
        }
        let (nodes, weights) = gauss_legendre(order);
        Ok(Self { nodes, weights })
    }

    fn integrate(&self, a: f64, b: f64, f: &impl Fn(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| w * f(mid + half * s))
            .sum::<f64>()
            * half
    }

    /// `(1/h_i) * integral over [x_{i-1/2}, x_{i+1/2}]` for an interior node `i`.
    fn average(&self, axis: &Axis1D, i: usize, f: impl Fn(f64) -> f64) -> f64 {
        let (a, c, b) = (axis.midpoint(i - 1), axis.node(i), axis.midpoint(i));
        (self.integrate(a, c, &f) + self.integrate(c, b, &f)) / axis.node_width(i)
    }
}

fn finite(v: f64, what: &str, x: f64, y: f64, t: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::invalid(format!(
            "{what} is not finite at (x, y, t) = ({x}, {y}, {t})"
        )))
    }
}

/// Builds loads on the velocity lattices for one forcing term.
fn assemble_with(
    grid: &StaggeredGrid2D,
    mode: RhsMode,
    order: usize,
    gx: impl Fn(f64, f64) -> f64,
    gy: impl Fn(f64, f64) -> f64,
    t: f64,
) -> Result<Velocity> {
    let mut out = Velocity::zeros(grid);
    let (nx, ny) = (grid.nx(), grid.ny());
    let avg = match mode {
        RhsMode::Averaged => Some(DualAverager::new(order)?),
        RhsMode::Pointwise => None,
    };
    for i in 1..nx {
        let xi = grid.x.node(i);
        for j in 0..ny {
            let y = grid.y.midpoint(j);
            let v = match &avg {
                Some(a) => a.average(&grid.x, i, |x| gx(x, y)),
                None => gx(xi, y),
            };
            out.x.set(i, j + 1, finite(v, "x-forcing", xi, y, t)?);
        }
    }
    for i in 0..nx {
        let x = grid.x.midpoint(i);
        for j in 1..ny {
            let yj = grid.y.node(j);
            let v = match &avg {
                Some(a) => a.average(&grid.y, j, |y| gy(x, y)),
                None => gy(x, yj),
            };
            out.y.set(i + 1, j, finite(v, "y-forcing", x, yj, t)?);
        }
    }
    Ok(out)
}

/// Momentum loads `(f^x, f^y)` of `spec` at time `t`.
pub fn assemble_rhs(spec: &ForcingSpec, grid: &StaggeredGrid2D, t: f64) -> Result<Velocity> {
    PreparedForcing::new(spec, grid)?.loads_at(t)
}

/// Averaged loads of `grad(phi)`, computed from the exact identity
/// `(1/h_i) * integral of d(phi)/dx = (phi(x_{i+1/2}) - phi(x_{i-1/2})) / h_i`.
pub fn gradient_perturbation(
    phi: impl Fn(f64, f64, f64) -> f64,
    grid: &StaggeredGrid2D,
    t: f64,
) -> Velocity {
    let mut out = Velocity::zeros(grid);
    let (nx, ny) = (grid.nx(), grid.ny());
    for i in 1..nx {
        for j in 0..ny {
            let y = grid.y.midpoint(j);
            let v = (phi(grid.x.midpoint(i), y, t) - phi(grid.x.midpoint(i - 1), y, t))
                / grid.x.node_width(i);
            out.x.set(i, j + 1, v);
        }
    }
    for i in 0..nx {
        for j in 1..ny {
            let x = grid.x.midpoint(i);
            let v = (phi(x, grid.y.midpoint(j), t) - phi(x, grid.y.midpoint(j - 1), t))
                / grid.y.node_width(j);
            out.y.set(i + 1, j, v);
        }
    }
    out
}

/// A forcing bound to one grid, with the spatial part of separable terms precomputed.
pub struct PreparedForcing {
    grid: StaggeredGrid2D,
    spec: ForcingSpec,
    cached: Vec<(TimeFn, Velocity)>,
    general: Vec<(SpaceTimeFn, SpaceTimeFn)>,
}

impl PreparedForcing {
    pub fn new(spec: &ForcingSpec, grid: &StaggeredGrid2D) -> Result<Self> {
        let mut cached = Vec::new();
        let mut general = Vec::new();
        for term in &spec.terms {
            match term.spatial_loads(grid, spec.mode, spec.quadrature_order)? {
                Some(c) => cached.push(c),
                None => {
                    if let ForcingTerm::General { gx, gy } = term {
                        general.push((gx.clone(), gy.clone()));
                    }
                }
            }
        }
        Ok(Self {
            grid: grid.clone(),
            spec: spec.clone(),
            cached,
            general,
        })
    }

    pub fn spec(&self) -> &ForcingSpec {
        &self.spec
    }

    pub fn is_zero(&self) -> bool {
        self.spec.is_zero()
    }

    /// Loads at time `t`.
    pub fn loads_at(&self, t: f64) -> Result<Velocity> {
        let mut out = Velocity::zeros(&self.grid);
        for (time, loads) in &self.cached {
            let a = time(t);
            for (o, l) in out.x.values_mut().iter_mut().zip(loads.x.values()) {
                *o += a * l;
            }
            for (o, l) in out.y.values_mut().iter_mut().zip(loads.y.values()) {
                *o += a * l;
            }
        }
        if !self.general.is_empty() {
            let extra = assemble_with(
                &self.grid,
                self.spec.mode,
                self.spec.quadrature_order,
                |x, y| self.general.iter().map(|(gx, _)| gx(x, y, t)).sum(),
                |x, y| self.general.iter().map(|(_, gy)| gy(x, y, t)).sum(),
                t,
            )?;
            for (o, l) in out.x.values_mut().iter_mut().zip(extra.x.values()) {
                *o += l;
            }
            for (o, l) in out.y.values_mut().iter_mut().zip(extra.y.values()) {
                *o += l;
            }
        }
        Ok(out)
    }
}

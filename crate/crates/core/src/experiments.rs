//! Manufactured solutions, error norms, convergence studies and robustness sweeps.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{discrete_curl, norm_linf, norm_m, project_mean_zero, sample_cells, Field2, Lattice, Velocity};
use crate::forcing::ForcingSpec;
use crate::grid::StaggeredGrid2D;
use crate::navier_stokes::{self, NonlinearConfig};
use crate::stokes::{self, LinearSolver, Scheme, StepState, StepperConfig, DEFAULT_SOLVER_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Model {
    Stokes,
    NavierStokes,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Stokes => "stokes",
            Model::NavierStokes => "ns",
        }
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stokes" => Ok(Model::Stokes),
            "ns" | "navier-stokes" | "navierstokes" => Ok(Model::NavierStokes),
            _ => Err(Error::Config(format!("unknown model '{s}' (expected stokes or ns)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseKind {
    /// Trigonometric velocity and oscillating pressure, `u = e^t U(x, y)`.
    Example1,
    /// Polynomial velocity growing linearly in time, cubic pressure.
    Example2,
}

impl std::str::FromStr for CaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "example1" => Ok(CaseKind::Example1),
            "example2" => Ok(CaseKind::Example2),
            _ => Err(Error::Config(format!("unknown case '{s}' (expected example1 or example2)"))),
        }
    }
}

type Vec2 = (f64, f64);
type Mat2 = [[f64; 2]; 2];

/// Separable exact solution `u = a(t) U(x, y)`, `p = b(t) P(x, y)` on the unit square.
#[derive(Clone, Copy)]
struct Profile {
    u: fn(f64, f64) -> Vec2,
    /// `[[dU^x/dx, dU^x/dy], [dU^y/dx, dU^y/dy]]`.
    grad_u: fn(f64, f64) -> Mat2,
    lap_u: fn(f64, f64) -> Vec2,
    /// Stream function with `U = (d psi/dy, -d psi/dx)`, zero on the boundary.
    psi: fn(f64, f64) -> f64,
    p: fn(f64, f64) -> f64,
    grad_p: fn(f64, f64) -> Vec2,
    a: fn(f64) -> f64,
    da: fn(f64) -> f64,
    b: fn(f64) -> f64,
}

mod ex1 {
    use super::*;

    pub fn u(x: f64, y: f64) -> Vec2 {
        let (sx, sy) = ((PI * x).sin(), (PI * y).sin());
        (PI * sx * sx * (2.0 * PI * y).sin(), -PI * (2.0 * PI * x).sin() * sy * sy)
    }

    pub fn grad_u(x: f64, y: f64) -> Mat2 {
        let (sx, sy) = ((PI * x).sin(), (PI * y).sin());
        let (s2x, s2y) = ((2.0 * PI * x).sin(), (2.0 * PI * y).sin());
        let (c2x, c2y) = ((2.0 * PI * x).cos(), (2.0 * PI * y).cos());
        [
            [PI * PI * s2x * s2y, 2.0 * PI * PI * sx * sx * c2y],
            [-2.0 * PI * PI * c2x * sy * sy, -PI * PI * s2x * s2y],
        ]
    }

    pub fn lap_u(x: f64, y: f64) -> Vec2 {
        let (sx, sy) = ((PI * x).sin(), (PI * y).sin());
        let (s2x, s2y) = ((2.0 * PI * x).sin(), (2.0 * PI * y).sin());
        let (c2x, c2y) = ((2.0 * PI * x).cos(), (2.0 * PI * y).cos());
        let p3 = PI * PI * PI;
        (
            p3 * (2.0 * c2x * s2y - 4.0 * sx * sx * s2y),
            -p3 * (2.0 * s2x * c2y - 4.0 * s2x * sy * sy),
        )
    }

    pub fn psi(x: f64, y: f64) -> f64 {
        ((PI * x).sin() * (PI * y).sin()).powi(2)
    }

    pub fn p(x: f64, y: f64) -> f64 {
        ((4.0 * PI * x).sin() * (4.0 * PI * y).sin()).powi(3)
    }

    pub fn grad_p(x: f64, y: f64) -> Vec2 {
        let (sx, sy) = ((4.0 * PI * x).sin(), (4.0 * PI * y).sin());
        let (cx, cy) = ((4.0 * PI * x).cos(), (4.0 * PI * y).cos());
        (
            12.0 * PI * sx * sx * cx * sy.powi(3),
            12.0 * PI * sx.powi(3) * sy * sy * cy,
        )
    }

    pub fn a(t: f64) -> f64 {
        t.exp()
    }

    pub fn b(t: f64) -> f64 {
        t.exp()
    }
}

mod ex2 {
    use super::*;

    // X = x^2 (x - 1)^2, Y = x (x - 1)(2x - 1) = X'/2
    fn xx(s: f64) -> f64 {
        s * s * (s - 1.0) * (s - 1.0)
    }
    fn xx1(s: f64) -> f64 {
        2.0 * yy(s)
    }
    fn xx2(s: f64) -> f64 {
        12.0 * s * s - 12.0 * s + 2.0
    }
    fn yy(s: f64) -> f64 {
        s * (s - 1.0) * (2.0 * s - 1.0)
    }
    fn yy1(s: f64) -> f64 {
        6.0 * s * s - 6.0 * s + 1.0
    }
    fn yy2(s: f64) -> f64 {
        12.0 * s - 6.0
    }

    pub fn u(x: f64, y: f64) -> Vec2 {
        (-256.0 * xx(x) * yy(y), 256.0 * yy(x) * xx(y))
    }

    pub fn grad_u(x: f64, y: f64) -> Mat2 {
        [
            [-256.0 * xx1(x) * yy(y), -256.0 * xx(x) * yy1(y)],
            [256.0 * yy1(x) * xx(y), 256.0 * yy(x) * xx1(y)],
        ]
    }

    pub fn lap_u(x: f64, y: f64) -> Vec2 {
        (
            -256.0 * (xx2(x) * yy(y) + xx(x) * yy2(y)),
            256.0 * (yy2(x) * xx(y) + yy(x) * xx2(y)),
        )
    }

    pub fn psi(x: f64, y: f64) -> f64 {
        -128.0 * xx(x) * xx(y)
    }

    pub fn p(x: f64, y: f64) -> f64 {
        10.0 * ((x - 0.5).powi(3) * y * y + (1.0 - x).powi(3) * (y - 0.5).powi(3))
    }

    pub fn grad_p(x: f64, y: f64) -> Vec2 {
        (
            10.0 * (3.0 * (x - 0.5).powi(2) * y * y - 3.0 * (1.0 - x).powi(2) * (y - 0.5).powi(3)),
            10.0 * (2.0 * (x - 0.5).powi(3) * y + 3.0 * (1.0 - x).powi(3) * (y - 0.5).powi(2)),
        )
    }

    pub fn a(t: f64) -> f64 {
        t
    }

    pub fn da(_t: f64) -> f64 {
        1.0
    }

    pub fn b(t: f64) -> f64 {
        t.exp()
    }
}

fn convective(profile: &Profile, x: f64, y: f64) -> Vec2 {
    let u = (profile.u)(x, y);
    let g = (profile.grad_u)(x, y);
    (u.0 * g[0][0] + u.1 * g[0][1], u.0 * g[1][0] + u.1 * g[1][1])
}

/// Analytic solution with its forcing `g = du/dt - mu lap u + grad p (+ (u . grad) u)`.
#[derive(Clone, Copy)]
pub struct ManufacturedCase {
    pub kind: CaseKind,
    pub model: Model,
    /// Pressure amplitude.
    pub lambda: f64,
    pub mu: f64,
    profile: Profile,
}

impl std::fmt::Debug for ManufacturedCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManufacturedCase")
            .field("kind", &self.kind)
            .field("model", &self.model)
            .field("lambda", &self.lambda)
            .field("mu", &self.mu)
            .finish()
    }
}

/// `p = lambda e^t sin^3(4 pi x) sin^3(4 pi y)`,
/// `u = pi e^t (sin^2(pi x) sin(2 pi y), -sin(2 pi x) sin^2(pi y))`; Stokes, `lambda = mu = 1`.
pub fn example1() -> ManufacturedCase {
    ManufacturedCase {
        kind: CaseKind::Example1,
        model: Model::Stokes,
        lambda: 1.0,
        mu: 1.0,
        profile: Profile {
            u: ex1::u,
            grad_u: ex1::grad_u,
            lap_u: ex1::lap_u,
            psi: ex1::psi,
            p: ex1::p,
            grad_p: ex1::grad_p,
            a: ex1::a,
            da: ex1::a,
            b: ex1::b,
        },
    }
}

/// `u^x = -256 t x^2 (x-1)^2 y (y-1)(2y-1)`, `u^y(x, y) = -u^x(y, x)`,
/// `p = 10 lambda e^t ((x - 1/2)^3 y^2 + (1 - x)^3 (y - 1/2)^3)`; Navier-Stokes, `lambda = mu = 1`.
pub fn example2() -> ManufacturedCase {
    ManufacturedCase {
        kind: CaseKind::Example2,
        model: Model::NavierStokes,
        lambda: 1.0,
        mu: 1.0,
        profile: Profile {
            u: ex2::u,
            grad_u: ex2::grad_u,
            lap_u: ex2::lap_u,
            psi: ex2::psi,
            p: ex2::p,
            grad_p: ex2::grad_p,
            a: ex2::a,
            da: ex2::da,
            b: ex2::b,
        },
    }
}

impl ManufacturedCase {
    pub fn from_kind(kind: CaseKind) -> Self {
        match kind {
            CaseKind::Example1 => example1(),
            CaseKind::Example2 => example2(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            CaseKind::Example1 => "example1",
            CaseKind::Example2 => "example2",
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn with_model(mut self, model: Model) -> Self {
        self.model = model;
        self
    }

    pub fn velocity(&self, x: f64, y: f64, t: f64) -> Vec2 {
        let a = (self.profile.a)(t);
        let u = (self.profile.u)(x, y);
        (a * u.0, a * u.1)
    }

    pub fn pressure(&self, x: f64, y: f64, t: f64) -> f64 {
        self.lambda * (self.profile.b)(t) * (self.profile.p)(x, y)
    }

    pub fn velocity_gradient(&self, x: f64, y: f64, t: f64) -> Mat2 {
        let a = (self.profile.a)(t);
        let g = (self.profile.grad_u)(x, y);
        [[a * g[0][0], a * g[0][1]], [a * g[1][0], a * g[1][1]]]
    }

    /// Pointwise forcing (for tests and MAC sampling checks).
    pub fn forcing_at(&self, x: f64, y: f64, t: f64) -> Vec2 {
        self.forcing().eval(x, y, t)
    }

    /// Forcing as separable terms; the pressure gradient is kept as an exact gradient term.
    pub fn forcing(&self) -> ForcingSpec {
        let pr = self.profile;
        let (mu, lambda) = (self.mu, self.lambda);
        let mut spec = ForcingSpec::zero()
            .with_separable(pr.da, move |x, y| (pr.u)(x, y).0, move |x, y| (pr.u)(x, y).1)
            .with_separable(
                move |t| -mu * (pr.a)(t),
                move |x, y| (pr.lap_u)(x, y).0,
                move |x, y| (pr.lap_u)(x, y).1,
            );
        if self.model == Model::NavierStokes {
            spec = spec.with_separable(
                move |t| (pr.a)(t) * (pr.a)(t),
                move |x, y| convective(&pr, x, y).0,
                move |x, y| convective(&pr, x, y).1,
            );
        }
        spec.with_gradient(
            move |t| lambda * (pr.b)(t),
            pr.p,
            move |x, y| (pr.grad_p)(x, y).0,
            move |x, y| (pr.grad_p)(x, y).1,
        )
    }

    /// Checks solenoidality at 100 seeded random points and no-slip on the boundary.
    pub fn check(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let (x, y) = (rng.gen::<f64>(), rng.gen::<f64>());
            let g = (self.profile.grad_u)(x, y);
            let scale = g.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
            if (g[0][0] + g[1][1]).abs() > 1e-12 * scale {
                return Err(Error::invalid(format!(
                    "{} velocity is not solenoidal at ({x}, {y})",
                    self.name()
                )));
            }
        }
        for k in 0..=20 {
            let s = k as f64 / 20.0;
            for (x, y) in [(s, 0.0), (s, 1.0), (0.0, s), (1.0, s)] {
                let u = (self.profile.u)(x, y);
                if u.0.abs().max(u.1.abs()) > 1e-12 {
                    return Err(Error::invalid(format!(
                        "{} velocity does not vanish at boundary point ({x}, {y})",
                        self.name()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Initial data: the discrete curl of the stream function at the grid corners.
    ///
    /// It is exactly divergence-free and second-order close to the sampled velocity. Point
    /// samples carry an `O(h^2)` divergence that the first step would turn into an `O(h^2/dt)`
    /// pressure error.
    pub fn initial_velocity(&self, grid: &StaggeredGrid2D) -> Result<Velocity> {
        let a = (self.profile.a)(0.0);
        let psi = Field2::from_fn(grid, Lattice::CORNER, |x, y| a * (self.profile.psi)(x, y));
        let mut w = discrete_curl(grid, &psi)?;
        w.enforce_no_slip();
        Ok(w)
    }

    /// Exact velocity sampled at the interior unknowns.
    pub fn sample_velocity(&self, grid: &StaggeredGrid2D, t: f64) -> Velocity {
        Velocity::sample(grid, |x, y| self.velocity(x, y, t))
    }
}

/// Which spatial norm drives the reported rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorNorm {
    L2,
    Linf,
}

impl std::str::FromStr for ErrorNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(ErrorNorm::L2),
            "linf" => Ok(ErrorNorm::Linf),
            _ => Err(Error::Config(format!("unknown norm '{s}' (expected l2 or linf)"))),
        }
    }
}

/// Errors of one run, maximized over the time levels `n = 1..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub case: String,
    pub scheme: Scheme,
    pub model: Model,
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub lambda: f64,
    pub mu: f64,
    /// `||e^u||_{l^inf(l^2)}`.
    pub eu_l2: f64,
    /// `||e^p||_{l^inf(l^2, M)}`.
    pub ep_l2: f64,
    pub eu_linf: f64,
    pub ep_linf: f64,
    pub rate_u: Option<f64>,
    pub rate_p: Option<f64>,
    pub wallclock_s: Option<f64>,
    /// Set when the run failed; the error fields are then NaN.
    pub failure: Option<String>,
}

impl ErrorRecord {
    pub fn velocity_error(&self, norm: ErrorNorm) -> f64 {
        match norm {
            ErrorNorm::L2 => self.eu_l2,
            ErrorNorm::Linf => self.eu_linf,
        }
    }

    pub fn pressure_error(&self, norm: ErrorNorm) -> f64 {
        match norm {
            ErrorNorm::L2 => self.ep_l2,
            ErrorNorm::Linf => self.ep_linf,
        }
    }
}

/// Run observer accumulating the time-maximum errors.
pub struct ErrorAccumulator {
    grid: StaggeredGrid2D,
    case: ManufacturedCase,
    u_shape: Velocity,
    p_shape: Field2,
    pub eu_l2: f64,
    pub ep_l2: f64,
    pub eu_linf: f64,
    pub ep_linf: f64,
}

impl ErrorAccumulator {
    pub fn new(grid: &StaggeredGrid2D, case: &ManufacturedCase) -> Result<Self> {
        let pr = case.profile;
        Ok(Self {
            grid: grid.clone(),
            case: *case,
            u_shape: Velocity::sample(grid, pr.u),
            p_shape: project_mean_zero(grid, &sample_cells(grid, pr.p))?,
            eu_l2: 0.0,
            ep_l2: 0.0,
            eu_linf: 0.0,
            ep_linf: 0.0,
        })
    }

    /// Adds the errors of `(w, z)` against the exact solution at time `t`.
    pub fn record(&mut self, t: f64, w: &Velocity, z: &Field2) -> Result<()> {
        let a = (self.case.profile.a)(t);
        let b = self.case.lambda * (self.case.profile.b)(t);
        let eu = w.zip_map(&self.u_shape, |v, e| v - a * e)?;
        let ep = z.zip_map(&self.p_shape, |v, e| v - b * e)?;
        self.eu_l2 = self.eu_l2.max(eu.norm(&self.grid)?);
        self.eu_linf = self.eu_linf.max(eu.max_abs_interior(&self.grid)?);
        self.ep_l2 = self.ep_l2.max(norm_m(&self.grid, &ep)?);
        self.ep_linf = self.ep_linf.max(norm_linf(&self.grid, &ep)?);
        Ok(())
    }

    pub fn observe(&mut self, s: &StepState) -> Result<()> {
        self.record(s.t, s.w, s.z)
    }
}

/// Errors of a stored trajectory `(W^n, Z^n)`, `n = 0..N`, with steps `dt` apart; `n = 0` is skipped.
pub fn compute_errors(
    trajectory: &[(Velocity, Field2)],
    case: &ManufacturedCase,
    grid: &StaggeredGrid2D,
    dt: f64,
) -> Result<(f64, f64, f64, f64)> {
    let mut acc = ErrorAccumulator::new(grid, case)?;
    for (n, (w, z)) in trajectory.iter().enumerate().skip(1) {
        acc.record(n as f64 * dt, w, z)?;
    }
    Ok((acc.eu_l2, acc.ep_l2, acc.eu_linf, acc.ep_linf))
}

/// Time-stepping and solver settings shared by the drivers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub scheme: Scheme,
    pub dt: f64,
    pub t_final: f64,
    pub linear_solver: LinearSolver,
    pub solver_tol: f64,
    pub nonlinear: NonlinearConfig,
}

impl RunSettings {
    pub fn new(scheme: Scheme, dt: f64) -> Self {
        Self {
            scheme,
            dt,
            t_final: 1.0,
            linear_solver: LinearSolver::Direct,
            solver_tol: DEFAULT_SOLVER_TOL,
            nonlinear: NonlinearConfig::default(),
        }
    }

    pub fn stepper_config(&self, mu: f64) -> StepperConfig {
        StepperConfig::new(mu, self.dt, self.scheme)
            .with_solver(self.linear_solver)
            .with_tol(self.solver_tol)
    }
}

/// Runs `case` on `grid` from the discretely solenoidal initial velocity and returns its errors.
/// `extra` sees every accepted step.
pub fn run_case(
    case: &ManufacturedCase,
    grid: &StaggeredGrid2D,
    settings: &RunSettings,
    extra: &mut dyn FnMut(&StepState) -> Result<()>,
) -> Result<ErrorRecord> {
    case.check()?;
    let start = Instant::now();
    let config = settings.stepper_config(case.mu);
    let forcing = case.forcing();
    let initial = case.initial_velocity(grid)?;
    let mut acc = ErrorAccumulator::new(grid, case)?;
    let mut observer = |s: &StepState| -> Result<()> {
        acc.observe(s)?;
        extra(s)
    };
    match case.model {
        Model::Stokes => {
            stokes::run(grid, &config, &forcing, settings.t_final, &initial, &mut observer)?;
        }
        Model::NavierStokes => {
            navier_stokes::run(
                grid,
                &config,
                &settings.nonlinear,
                &forcing,
                settings.t_final,
                &initial,
                &mut observer,
            )?;
        }
    }
    Ok(ErrorRecord {
        case: case.name().to_string(),
        scheme: settings.scheme,
        model: case.model,
        nx: grid.nx(),
        ny: grid.ny(),
        dt: settings.dt,
        lambda: case.lambda,
        mu: case.mu,
        eu_l2: acc.eu_l2,
        ep_l2: acc.ep_l2,
        eu_linf: acc.eu_linf,
        ep_linf: acc.ep_linf,
        rate_u: None,
        rate_p: None,
        wallclock_s: Some(start.elapsed().as_secs_f64()),
        failure: None,
    })
}

fn failed_record(case: &ManufacturedCase, grid: &StaggeredGrid2D, settings: &RunSettings, err: &Error) -> ErrorRecord {
    ErrorRecord {
        case: case.name().to_string(),
        scheme: settings.scheme,
        model: case.model,
        nx: grid.nx(),
        ny: grid.ny(),
        dt: settings.dt,
        lambda: case.lambda,
        mu: case.mu,
        eu_l2: f64::NAN,
        ep_l2: f64::NAN,
        eu_linf: f64::NAN,
        ep_linf: f64::NAN,
        rate_u: None,
        rate_p: None,
        wallclock_s: None,
        failure: Some(err.to_string()),
    }
}

/// Grids of a refinement study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridFamily {
    Uniform,
    /// A seeded random grid at the coarsest level with max/min width ratio at least `ratio`,
    /// halved uniformly for each finer level so the ratio is preserved.
    Nested { ratio: f64, seed: u64 },
}

impl GridFamily {
    pub fn grids(&self, levels: &[usize]) -> Result<Vec<StaggeredGrid2D>> {
        if levels.is_empty() {
            return Err(Error::Config("no refinement levels given".into()));
        }
        match *self {
            GridFamily::Uniform => levels
                .iter()
                .map(|&n| StaggeredGrid2D::uniform(n, n, (1.0, 1.0)))
                .collect(),
            GridFamily::Nested { ratio, seed } => {
                let base = StaggeredGrid2D::random_nonuniform(levels[0], levels[0], (1.0, 1.0), ratio, seed)?;
                let mut out = Vec::with_capacity(levels.len());
                for &n in levels {
                    if n % levels[0] != 0 || !(n / levels[0]).is_power_of_two() {
                        return Err(Error::Config(format!(
                            "nested levels must be the coarsest level times a power of two, got {n} after {}",
                            levels[0]
                        )));
                    }
                    let mut g = base.clone();
                    while g.nx() < n {
                        g = g.refined();
                    }
                    out.push(g);
                }
                Ok(out)
            }
        }
    }
}

/// Fills `rate_*` with `log2(e_coarse / e_fine)` between consecutive records.
pub fn assign_rates(records: &mut [ErrorRecord], norm: ErrorNorm) {
    for k in 1..records.len() {
        let (c, f) = (&records[k - 1], &records[k]);
        let ratio = c.nx as f64 / f.nx as f64;
        let rate = |ec: f64, ef: f64| {
            let r = (ec / ef).ln() / (1.0 / ratio).ln();
            r.is_finite().then_some(r)
        };
        let ru = rate(c.velocity_error(norm), f.velocity_error(norm));
        let rp = rate(c.pressure_error(norm), f.pressure_error(norm));
        records[k].rate_u = ru;
        records[k].rate_p = rp;
    }
}

/// Runs one refinement level per entry of `levels` with `dt = 1 / N^2`.
///
/// Levels run in parallel; a failed level yields a record with `failure` set and the others
/// still run.
pub fn convergence_study(
    case: &ManufacturedCase,
    settings: &RunSettings,
    family: GridFamily,
    levels: &[usize],
    norm: ErrorNorm,
) -> Result<Vec<ErrorRecord>> {
    if levels.len() < 2 {
        return Err(Error::Config("a convergence study needs at least two levels".into()));
    }
    let grids = family.grids(levels)?;
    let mut records: Vec<ErrorRecord> = grids
        .par_iter()
        .map(|g| {
            let n = g.nx() as f64;
            let s = RunSettings {
                dt: 1.0 / (n * n),
                ..*settings
            };
            run_case(case, g, &s, &mut |_| Ok(())).unwrap_or_else(|e| failed_record(case, g, &s, &e))
        })
        .collect();
    assign_rates(&mut records, norm);
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Lambda,
    Mu,
}

impl SweepAxis {
    /// `{1, 1e2, 1e4, 1e6}` for the pressure amplitude, `{1, 1e-2, 1e-4, 1e-6}` for the viscosity.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::Lambda => vec![1.0, 1e2, 1e4, 1e6],
            SweepAxis::Mu => vec![1.0, 1e-2, 1e-4, 1e-6],
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lambda" => Ok(SweepAxis::Lambda),
            "mu" => Ok(SweepAxis::Mu),
            _ => Err(Error::Config(format!("unknown sweep axis '{s}' (expected lambda or mu)"))),
        }
    }
}

/// One run per parameter value on a fixed grid and time step, in the order given.
pub fn robustness_sweep(
    case: &ManufacturedCase,
    settings: &RunSettings,
    grid: &StaggeredGrid2D,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<ErrorRecord>> {
    values
        .par_iter()
        .map(|&v| {
            let c = match axis {
                SweepAxis::Lambda => case.with_lambda(v),
                SweepAxis::Mu => case.with_mu(v),
            };
            run_case(&c, grid, settings, &mut |_| Ok(()))
        })
        .collect()
}

pub const RESULTS_HEADER: [&str; 14] = [
    "case", "scheme", "Nx", "Ny", "dt", "lambda", "mu", "eu_l2", "rate_u", "ep_l2", "rate_p", "eu_linf", "ep_linf",
    "wallclock_s",
];

/// Results CSV; `wallclock` off leaves that column empty so outputs are reproducible.
pub fn write_results_csv<W: Write>(records: &[ErrorRecord], out: W, wallclock: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    let opt = |v: Option<f64>| v.map(|r| format!("{r:.4}")).unwrap_or_default();
    for r in records {
        w.write_record([
            r.case.clone(),
            r.scheme.name().to_string(),
            r.nx.to_string(),
            r.ny.to_string(),
            format!("{:e}", r.dt),
            format!("{:e}", r.lambda),
            format!("{:e}", r.mu),
            format!("{:.6e}", r.eu_l2),
            opt(r.rate_u),
            format!("{:.6e}", r.ep_l2),
            opt(r.rate_p),
            format!("{:.6e}", r.eu_linf),
            format!("{:.6e}", r.ep_linf),
            if wallclock {
                r.wallclock_s.map(|s| format!("{s:.3}")).unwrap_or_default()
            } else {
                String::new()
            },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table in the layout of a convergence table.
pub fn format_rates_table(records: &[ErrorRecord], norm: ErrorNorm) -> String {
    let (u, p) = match norm {
        ErrorNorm::L2 => ("||e_u||_l2", "||e_p||_l2,M"),
        ErrorNorm::Linf => ("||e_u||_linf", "||e_p||_linf"),
    };
    let mut s = format!("{:>9}  {:>12}  {:>6}  {:>12}  {:>6}\n", "grid", p, "rate", u, "rate");
    for r in records {
        let rate = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
        s += &format!(
            "{:>9}  {:>12.2e}  {:>6}  {:>12.2e}  {:>6}",
            format!("{}x{}", r.nx, r.ny),
            r.pressure_error(norm),
            rate(r.rate_p),
            r.velocity_error(norm),
            rate(r.rate_u)
        );
        if let Some(f) = &r.failure {
            s += &format!("  FAILED: {f}");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference oracle for the forcing: `du/dt - mu lap u + grad p (+ (u . grad) u)`.
    fn fd_forcing(case: &ManufacturedCase, x: f64, y: f64, t: f64) -> Vec2 {
        let h = 1e-4;
        let u = |x: f64, y: f64, t: f64| case.velocity(x, y, t);
        let p = |x: f64, y: f64| case.pressure(x, y, t);
        let mut g = [0.0; 2];
        for c in 0..2 {
            let comp = |v: Vec2| if c == 0 { v.0 } else { v.1 };
            let dt = (comp(u(x, y, t + h)) - comp(u(x, y, t - h))) / (2.0 * h);
            let c0 = comp(u(x, y, t));
            let lap = (comp(u(x + h, y, t)) + comp(u(x - h, y, t)) + comp(u(x, y + h, t)) + comp(u(x, y - h, t))
                - 4.0 * c0)
                / (h * h);
            let dx = (comp(u(x + h, y, t)) - comp(u(x - h, y, t))) / (2.0 * h);
            let dy = (comp(u(x, y + h, t)) - comp(u(x, y - h, t))) / (2.0 * h);
            let gp = if c == 0 {
                (p(x + h, y) - p(x - h, y)) / (2.0 * h)
            } else {
                (p(x, y + h) - p(x, y - h)) / (2.0 * h)
            };
            let uu = u(x, y, t);
            let conv = if case.model == Model::NavierStokes {
                uu.0 * dx + uu.1 * dy
            } else {
                0.0
            };
            g[c] = dt - case.mu * lap + gp + conv;
        }
        (g[0], g[1])
    }

    #[test]
    fn forcing_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in [
            example1(),
            example1().with_mu(0.3).with_lambda(7.0).with_model(Model::NavierStokes),
            example2(),
            example2().with_mu(0.01).with_lambda(3.0).with_model(Model::Stokes),
        ] {
            for _ in 0..20 {
                let (x, y, t) = (rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.1..1.0));
                let a = case.forcing_at(x, y, t);
                let b = fd_forcing(&case, x, y, t);
                let scale = 1.0 + a.0.abs().max(a.1.abs());
                assert!((a.0 - b.0).abs() < 1e-4 * scale && (a.1 - b.1).abs() < 1e-4 * scale, "{case:?} {a:?} {b:?}");
            }
        }
    }

    #[test]
    fn exact_solutions_are_solenoidal_and_vanish_on_the_wall() {
        example1().check().unwrap();
        example2().check().unwrap();
        let g = example1().velocity_gradient(0.3, 0.7, 0.0);
        assert!((g[0][0] + g[1][1]).abs() < 1e-12);
        for y in [0.0, 0.3, 0.9] {
            assert_eq!(example1().velocity(0.0, y, 0.4).0, 0.0);
        }
    }

    #[test]
    fn example2_starts_at_rest() {
        let g = StaggeredGrid2D::uniform(6, 6, (1.0, 1.0)).unwrap();
        assert_eq!(example2().sample_velocity(&g, 0.0).max_abs_interior(&g).unwrap(), 0.0);
        let u = example1().velocity(0.25, 0.125, 0.0);
        let want = (PI * 0.5 * (PI / 4.0).sin(), -PI * (PI / 2.0).sin() * (PI / 8.0).sin().powi(2));
        assert!((u.0 - want.0).abs() < 1e-15 && (u.1 - want.1).abs() < 1e-15);
    }

    #[test]
    fn initial_data_is_solenoidal_and_close_to_samples() {
        for case in [example1(), example2().with_model(Model::Stokes)] {
            let mut prev = f64::NAN;
            for n in [8, 16, 32] {
                let g = StaggeredGrid2D::random_nonuniform(n, n, (1.0, 1.0), 1.5, 3).unwrap();
                let psi = Field2::from_fn(&g, Lattice::CORNER, case.profile.psi);
                let w = discrete_curl(&g, &psi).unwrap();
                assert!(crate::field::divergence(&g, &w).unwrap().max_abs() < 1e-11);
                let e = w.sub(&Velocity::sample(&g, case.profile.u)).unwrap().max_abs_interior(&g).unwrap();
                if prev.is_finite() {
                    assert!(prev / e > 3.0, "{} -> {}", prev, e);
                }
                prev = e;
            }
        }
        let g = StaggeredGrid2D::uniform(6, 6, (1.0, 1.0)).unwrap();
        assert_eq!(example2().initial_velocity(&g).unwrap().max_abs_interior(&g).unwrap(), 0.0);
        let psi = |x: f64, y: f64| (example2().profile.psi)(x, y);
        let h = 1e-5;
        let (x, y) = (0.3, 0.8);
        let u = (example2().profile.u)(x, y);
        assert!(((psi(x, y + h) - psi(x, y - h)) / (2.0 * h) - u.0).abs() < 1e-6);
        assert!((-(psi(x + h, y) - psi(x - h, y)) / (2.0 * h) - u.1).abs() < 1e-6);
    }

    #[test]
    fn exact_trajectory_has_zero_error() {
        let g = StaggeredGrid2D::random_nonuniform(8, 8, (1.0, 1.0), 1.5, 1).unwrap();
        let case = example1().with_lambda(3.0);
        let dt = 0.25;
        let traj: Vec<(Velocity, Field2)> = (0..=4)
            .map(|n| {
                let t = n as f64 * dt;
                let p = sample_cells(&g, |x, y| case.pressure(x, y, t) + 5.0);
                (case.sample_velocity(&g, t), project_mean_zero(&g, &p).unwrap())
            })
            .collect();
        let (a, b, c, d) = compute_errors(&traj, &case, &g, dt).unwrap();
        assert!(a.max(b).max(c).max(d) <= 1e-13 * 3.0 * 1f64.exp() * 10.0, "{a} {b} {c} {d}");
    }

    #[test]
    fn rates_follow_error_ratios() {
        let rec = |n: usize, e: f64| ErrorRecord {
            case: "x".into(),
            scheme: Scheme::Rmac,
            model: Model::Stokes,
            nx: n,
            ny: n,
            dt: 0.0,
            lambda: 1.0,
            mu: 1.0,
            eu_l2: e,
            ep_l2: 2.0 * e,
            eu_linf: e,
            ep_linf: e,
            rate_u: None,
            rate_p: None,
            wallclock_s: None,
            failure: None,
        };
        let mut rs = vec![rec(5, 1.0), rec(10, 0.25), rec(20, 0.125)];
        assign_rates(&mut rs, ErrorNorm::L2);
        assert_eq!(rs[0].rate_u, None);
        assert!((rs[1].rate_u.unwrap() - 2.0).abs() < 1e-14);
        assert!((rs[2].rate_p.unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn nested_family_preserves_ratio() {
        let gs = GridFamily::Nested { ratio: 1.5, seed: 7 }.grids(&[5, 10, 20]).unwrap();
        assert_eq!(gs.iter().map(|g| g.nx()).collect::<Vec<_>>(), vec![5, 10, 20]);
        for g in &gs {
            assert!(g.x.width_ratio() >= 1.5 && g.y.width_ratio() >= 1.5);
        }
        assert!(GridFamily::Nested { ratio: 1.5, seed: 7 }.grids(&[5, 15]).is_err());
    }

    #[test]
    fn coarse_example1_run_is_second_order() {
        let case = example1();
        let s = RunSettings::new(Scheme::Rmac, 1.0);
        let recs = convergence_study(&case, &RunSettings { t_final: 0.25, ..s }, GridFamily::Uniform, &[8, 16], ErrorNorm::L2);
        // t_final must be a multiple of 1/N^2
        let recs = recs.unwrap();
        let r = recs[1].rate_u.unwrap();
        assert!((1.6..2.5).contains(&r), "{r}");
        let mut buf = Vec::new();
        write_results_csv(&recs, &mut buf, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("case,scheme,Nx,Ny,dt,lambda,mu,eu_l2,rate_u,ep_l2,rate_p,eu_linf,ep_linf,wallclock_s"));
        assert!(text.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn failed_levels_are_annotated() {
        let case = example1();
        let s = RunSettings {
            t_final: 0.1,
            ..RunSettings::new(Scheme::Rmac, 1.0)
        };
        // T = 0.1 is not a multiple of 1/16 but is of 1/100
        let recs = convergence_study(&case, &s, GridFamily::Uniform, &[4, 10], ErrorNorm::L2).unwrap();
        assert!(recs[0].failure.is_some());
        assert!(recs[1].failure.is_none());
    }
}

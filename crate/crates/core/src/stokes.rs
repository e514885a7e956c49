//! Backward-Euler steps of the MAC/RMAC Stokes scheme as sparse saddle-point systems.
//!
//! Every momentum row is the pointwise difference equation multiplied by its control volume
//! (`h_i k_{j+1/2}` for `u^x`, `h_{i+1/2} k_j` for `u^y`). The velocity block is then symmetric
//! and the weighted divergence is exactly the negative transpose of the weighted gradient.
//! Unknowns are ordered interior `u^x`, interior `u^y`, all cell pressures, one multiplier
//! enforcing `(Z, 1)_M = 0`.

use std::collections::BTreeSet;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::field::{write_fields_csv, Field2, Lattice, Velocity};
use crate::forcing::{ForcingSpec, PreparedForcing, RhsMode};
use crate::grid::StaggeredGrid2D;
use crate::linalg::{minres, norm2, relative_residual, CsrMatrix, SparseLu};

/// Spatial discretization of the right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Forcing averaged over dual intervals.
    Rmac,
    /// Forcing sampled at velocity nodes.
    Mac,
}

impl Scheme {
    pub fn rhs_mode(self) -> RhsMode {
        match self {
            Scheme::Rmac => RhsMode::Averaged,
            Scheme::Mac => RhsMode::Pointwise,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Rmac => "rmac",
            Scheme::Mac => "mac",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rmac" => Ok(Scheme::Rmac),
            "mac" => Ok(Scheme::Mac),
            _ => Err(Error::Config(format!("unknown scheme '{s}' (expected rmac or mac)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinearSolver {
    /// Sparse LU, factorized once per stepper.
    Direct,
    /// Block-diagonally preconditioned MINRES.
    Minres { max_iters: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    pub mu: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub linear_solver: LinearSolver,
    /// Bound on the relative residual of the full saddle system.
    pub solver_tol: f64,
}

pub const DEFAULT_SOLVER_TOL: f64 = 1e-10;

impl StepperConfig {
    pub fn new(mu: f64, dt: f64, scheme: Scheme) -> Self {
        Self {
            mu,
            dt,
            scheme,
            linear_solver: LinearSolver::Direct,
            solver_tol: DEFAULT_SOLVER_TOL,
        }
    }

    pub fn with_solver(mut self, solver: LinearSolver) -> Self {
        self.linear_solver = solver;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.solver_tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.solver_tol >= 1e-14 && self.solver_tol < 1.0) {
            return Err(Error::Config(format!(
                "solver_tol must lie in [1e-14, 1), got {}",
                self.solver_tol
            )));
        }
        if let LinearSolver::Minres { max_iters } = self.linear_solver {
            if max_iters == 0 {
                return Err(Error::Config("MINRES needs max_iters >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Position of each unknown in the global vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofMap {
    pub nx: usize,
    pub ny: usize,
}

impl DofMap {
    pub fn new(grid: &StaggeredGrid2D) -> Self {
        Self {
            nx: grid.nx(),
            ny: grid.ny(),
        }
    }

    pub fn n_ux(&self) -> usize {
        (self.nx - 1) * self.ny
    }

    pub fn n_uy(&self) -> usize {
        self.nx * (self.ny - 1)
    }

    pub fn n_velocity(&self) -> usize {
        self.n_ux() + self.n_uy()
    }

    pub fn n_pressure(&self) -> usize {
        self.nx * self.ny
    }

    pub fn dim(&self) -> usize {
        self.n_velocity() + self.n_pressure() + 1
    }

    /// `u^x` at `(x_i, y_{j+1/2})`, `1 <= i < nx`.
    pub fn ux(&self, i: usize, j: usize) -> usize {
        (i - 1) * self.ny + j
    }

    /// `u^y` at `(x_{i+1/2}, y_j)`, `1 <= j < ny`.
    pub fn uy(&self, i: usize, j: usize) -> usize {
        self.n_ux() + i * (self.ny - 1) + (j - 1)
    }

    pub fn p(&self, i: usize, j: usize) -> usize {
        self.n_velocity() + i * self.ny + j
    }

    pub fn multiplier(&self) -> usize {
        self.dim() - 1
    }

    /// Interior velocity values as a vector of length `n_velocity`.
    pub fn gather(&self, w: &Velocity) -> Vec<f64> {
        let mut v = vec![0.0; self.n_velocity()];
        for i in 1..self.nx {
            for j in 0..self.ny {
                v[self.ux(i, j)] = w.x.get(i, j + 1);
            }
        }
        for i in 0..self.nx {
            for j in 1..self.ny {
                v[self.uy(i, j)] = w.y.get(i + 1, j);
            }
        }
        v
    }

    /// Velocity with the given interior values and zero boundary entries.
    pub fn scatter_velocity(&self, grid: &StaggeredGrid2D, v: &[f64]) -> Velocity {
        let mut w = Velocity::zeros(grid);
        for i in 1..self.nx {
            for j in 0..self.ny {
                w.x.set(i, j + 1, v[self.ux(i, j)]);
            }
        }
        for i in 0..self.nx {
            for j in 1..self.ny {
                w.y.set(i + 1, j, v[self.uy(i, j)]);
            }
        }
        w
    }

    pub fn scatter_pressure(&self, grid: &StaggeredGrid2D, v: &[f64]) -> Field2 {
        let mut z = Field2::zeros(grid, Lattice::CELL);
        for i in 0..self.nx {
            for j in 0..self.ny {
                z.set(i, j, v[self.p(i, j)]);
            }
        }
        z
    }
}

/// Assembled saddle system `[[A, G, 0], [G^T, 0, m], [0, m^T, 0]]` with its right-hand side.
#[derive(Debug, Clone)]
pub struct SaddleSystem {
    pub dofs: DofMap,
    /// Weighted `(1/dt) mass + mu (-Laplacian)` on interior velocities.
    pub a: CsrMatrix,
    /// Weighted pressure gradient, velocity rows by cell columns.
    pub g: CsrMatrix,
    /// Weighted divergence, cell rows by velocity columns; equals `-G^T`.
    pub b: CsrMatrix,
    /// Cell measures `h_{i+1/2} k_{j+1/2}`.
    pub m: Vec<f64>,
    pub rhs_u: Vec<f64>,
    pub rhs_div: Vec<f64>,
    /// The full symmetric matrix.
    pub matrix: CsrMatrix,
}

impl SaddleSystem {
    /// Right-hand side of the full system.
    pub fn rhs(&self) -> Vec<f64> {
        let mut r = Vec::with_capacity(self.dofs.dim());
        r.extend_from_slice(&self.rhs_u);
        r.extend(self.rhs_div.iter().map(|v| -v));
        r.push(0.0);
        r
    }
}

struct Blocks {
    a: Vec<(usize, usize, f64)>,
    g: Vec<(usize, usize, f64)>,
    m: Vec<f64>,
}

fn assemble_blocks(grid: &StaggeredGrid2D, config: &StepperConfig, d: &DofMap) -> Blocks {
    let (nx, ny) = (d.nx, d.ny);
    let (xa, ya) = (&grid.x, &grid.y);
    let (mu, inv_dt) = (config.mu, 1.0 / config.dt);
    let nvel = d.n_velocity();
    let mut a = Vec::with_capacity(5 * nvel);
    let mut g = Vec::with_capacity(2 * nvel);

    for i in 1..nx {
        let hi = xa.node_width(i);
        for j in 0..ny {
            let kc = ya.cell_width(j);
            let r = d.ux(i, j);
            let mut diag = hi * kc * inv_dt;
            // x: k (u_{i+1} - u_i)/h_{i+1/2} - k (u_i - u_{i-1})/h_{i-1/2}
            for (nb, h) in [(i - 1, xa.cell_width(i - 1)), (i + 1, xa.cell_width(i))] {
                let c = mu * kc / h;
                diag += c;
                if nb >= 1 && nb < nx {
                    a.push((r, d.ux(nb, j), -c));
                }
            }
            // y: h (u_{j+1} - u_j)/k_{j+1} - h (u_j - u_{j-1})/k_j, wall values pinned to zero
            let c_lo = mu * hi / ya.node_width(j);
            diag += c_lo;
            if j >= 1 {
                a.push((r, d.ux(i, j - 1), -c_lo));
            }
            let c_hi = mu * hi / ya.node_width(j + 1);
            diag += c_hi;
            if j + 1 < ny {
                a.push((r, d.ux(i, j + 1), -c_hi));
            }
            a.push((r, r, diag));
            g.push((r, d.p(i, j) - nvel, kc));
            g.push((r, d.p(i - 1, j) - nvel, -kc));
        }
    }
    for i in 0..nx {
        let hc = xa.cell_width(i);
        for j in 1..ny {
            let kj = ya.node_width(j);
            let r = d.uy(i, j);
            let mut diag = hc * kj * inv_dt;
            let c_lo = mu * kj / xa.node_width(i);
            diag += c_lo;
            if i >= 1 {
                a.push((r, d.uy(i - 1, j), -c_lo));
            }
            let c_hi = mu * kj / xa.node_width(i + 1);
            diag += c_hi;
            if i + 1 < nx {
                a.push((r, d.uy(i + 1, j), -c_hi));
            }
            for (nb, k) in [(j - 1, ya.cell_width(j - 1)), (j + 1, ya.cell_width(j))] {
                let c = mu * hc / k;
                diag += c;
                if nb >= 1 && nb < ny {
                    a.push((r, d.uy(i, nb), -c));
                }
            }
            a.push((r, r, diag));
            g.push((r, d.p(i, j) - nvel, hc));
            g.push((r, d.p(i, j - 1) - nvel, -hc));
        }
    }
    let mut m = vec![0.0; d.n_pressure()];
    for i in 0..nx {
        for j in 0..ny {
            m[d.p(i, j) - nvel] = xa.cell_width(i) * ya.cell_width(j);
        }
    }
    Blocks { a, g, m }
}

fn full_matrix(d: &DofMap, blocks: &Blocks) -> CsrMatrix {
    let nvel = d.n_velocity();
    let lm = d.multiplier();
    let mut t = blocks.a.clone();
    t.reserve(2 * blocks.g.len() + 2 * blocks.m.len());
    for &(r, c, v) in &blocks.g {
        t.push((r, nvel + c, v));
        t.push((nvel + c, r, v));
    }
    for (c, &w) in blocks.m.iter().enumerate() {
        t.push((nvel + c, lm, w));
        t.push((lm, nvel + c, w));
    }
    CsrMatrix::from_triplets(d.dim(), d.dim(), &t)
}

/// Momentum right-hand side: control volume times `(f + W_old / dt)`.
fn momentum_rhs(grid: &StaggeredGrid2D, d: &DofMap, dt: f64, w_old: &Velocity, loads: &Velocity) -> Vec<f64> {
    let mut r = vec![0.0; d.n_velocity()];
    for i in 1..d.nx {
        let hi = grid.x.node_width(i);
        for j in 0..d.ny {
            let vol = hi * grid.y.cell_width(j);
            r[d.ux(i, j)] = vol * (loads.x.get(i, j + 1) + w_old.x.get(i, j + 1) / dt);
        }
    }
    for i in 0..d.nx {
        let hc = grid.x.cell_width(i);
        for j in 1..d.ny {
            let vol = hc * grid.y.node_width(j);
            r[d.uy(i, j)] = vol * (loads.y.get(i + 1, j) + w_old.y.get(i + 1, j) / dt);
        }
    }
    r
}

fn check_inputs(grid: &StaggeredGrid2D, w_old: &Velocity, loads: &Velocity) -> Result<()> {
    w_old.check(grid)?;
    loads.check(grid)?;
    if grid.nx() < 2 || grid.ny() < 2 {
        return Err(Error::invalid("the Stokes system needs at least 2 cells per direction"));
    }
    Ok(())
}

/// Assembles one backward-Euler step with momentum loads `loads` (already reconstructed).
pub fn assemble(
    grid: &StaggeredGrid2D,
    config: &StepperConfig,
    w_old: &Velocity,
    loads: &Velocity,
) -> Result<SaddleSystem> {
    config.validate()?;
    check_inputs(grid, w_old, loads)?;
    let dofs = DofMap::new(grid);
    let blocks = assemble_blocks(grid, config, &dofs);
    let nvel = dofs.n_velocity();
    let np = dofs.n_pressure();
    let a = CsrMatrix::from_triplets(nvel, nvel, &blocks.a);
    let g = CsrMatrix::from_triplets(nvel, np, &blocks.g);
    let b = g.transpose().scaled(-1.0);
    let matrix = full_matrix(&dofs, &blocks);
    Ok(SaddleSystem {
        dofs,
        a,
        g,
        b,
        m: blocks.m,
        rhs_u: momentum_rhs(grid, &dofs, config.dt, w_old, loads),
        rhs_div: vec![0.0; np],
        matrix,
    })
}

/// Diagnostics of one linear solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Final relative residual of the full system.
    pub residual: f64,
    /// MINRES iterations, or iterative-refinement sweeps for the direct solver.
    pub iterations: usize,
    /// Whether this solve computed a new factorization.
    pub factorized: bool,
}

/// Direct solver for the bordered saddle system.
///
/// The dense multiplier row would ruin the fill-reducing ordering, so the factorization is of
/// the unbordered system with one pressure pinned. Since `G 1 = 0`, summing the divergence rows
/// gives the multiplier, the reduced system is then consistent, and the pressure constant is
/// fixed by the mean row afterwards.
struct BorderedLu {
    lu: SparseLu,
    nvel: usize,
    /// Multiplier column restricted to the pressure rows.
    m: Vec<f64>,
    m_sum: f64,
}

impl BorderedLu {
    fn factor(d: &DofMap, k: &CsrMatrix) -> Result<Self> {
        let nvel = d.n_velocity();
        let lm = d.multiplier();
        let pin = nvel;
        let mut m = vec![0.0; d.n_pressure()];
        let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(k.nnz());
        for (r, c, v) in k.triplets() {
            if c == lm && r != lm {
                m[r - nvel] = v;
            } else if r != lm && r != pin && c != pin {
                t.push((r, c, v));
            }
        }
        t.push((pin, pin, 1.0));
        let m_sum: f64 = m.iter().sum();
        Ok(Self {
            lu: SparseLu::factor(&CsrMatrix::from_triplets(lm, lm, &t))?,
            nvel,
            m,
            m_sum,
        })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (nvel, lm) = (self.nvel, b.len() - 1);
        let xi = b[nvel..lm].iter().sum::<f64>() / self.m_sum;
        let mut rhs: Vec<f64> = b[..lm].to_vec();
        rhs.iter_mut().skip(nvel).zip(&self.m).for_each(|(r, w)| *r -= w * xi);
        rhs[nvel] = 0.0;
        let mut x = self.lu.solve(&rhs);
        let c = (b[lm] - x[nvel..].iter().zip(&self.m).map(|(p, w)| p * w).sum::<f64>()) / self.m_sum;
        x[nvel..].iter_mut().for_each(|p| *p += c);
        x.push(xi);
        x
    }
}

enum Backend {
    Lu(BorderedLu),
    Minres { max_iters: usize, precond: Vec<f64> },
}

/// SPD block-diagonal preconditioner: `diag(A)`, the diagonal of `G^T diag(A)^{-1} G`, and
/// the matching multiplier Schur entry. Stored as inverse weights.
fn block_jacobi(d: &DofMap, k: &CsrMatrix) -> Vec<f64> {
    let nvel = d.n_velocity();
    let mut inv = vec![0.0; d.dim()];
    let diag = k.diagonal();
    for r in 0..nvel {
        inv[r] = 1.0 / diag[r];
    }
    let mut schur = vec![0.0; d.n_pressure()];
    for r in 0..nvel {
        for (c, v) in k.row(r) {
            if c >= nvel && c < nvel + d.n_pressure() {
                schur[c - nvel] += v * v / diag[r];
            }
        }
    }
    let mut lm = 0.0;
    for (c, s) in schur.iter().enumerate() {
        let w = k.get(nvel + c, d.multiplier());
        inv[nvel + c] = 1.0 / s;
        lm += w * w / s;
    }
    inv[d.multiplier()] = 1.0 / lm;
    inv
}

fn solve_with(backend: &Backend, k: &CsrMatrix, rhs: &[f64], tol: f64) -> Result<(Vec<f64>, usize, f64)> {
    if norm2(rhs) == 0.0 {
        return Ok((vec![0.0; rhs.len()], 0, 0.0));
    }
    match backend {
        Backend::Lu(lu) => {
            let mut x = lu.solve(rhs);
            let mut res = relative_residual(k, &x, rhs);
            let mut history = vec![res];
            let mut sweeps = 0;
            while !(res <= tol) && sweeps < 3 {
                let kx = k.mul_vec(&x);
                let r: Vec<f64> = rhs.iter().zip(&kx).map(|(b, a)| b - a).collect();
                let dx = lu.solve(&r);
                x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
                res = relative_residual(k, &x, rhs);
                history.push(res);
                sweeps += 1;
            }
            if !(res <= tol) {
                return Err(Error::Solver {
                    message: format!("direct solve residual {res:.3e} exceeds tolerance {tol:.1e}"),
                    residuals: history,
                });
            }
            Ok((x, sweeps, res))
        }
        Backend::Minres { max_iters, precond } => {
            // the preconditioned estimate is not the 2-norm residual; aim a little lower
            let sol = minres(
                k,
                rhs,
                |r, z| z.iter_mut().zip(r).zip(precond).for_each(|((z, r), p)| *z = r * p),
                0.1 * tol,
                *max_iters,
            );
            let res = relative_residual(k, &sol.x, rhs);
            if !(res <= tol) {
                return Err(Error::Solver {
                    message: format!(
                        "MINRES stopped after {} iterations with residual {res:.3e} (tolerance {tol:.1e})",
                        sol.iterations
                    ),
                    residuals: sol.history,
                });
            }
            Ok((sol.x, sol.iterations, res))
        }
    }
}

fn make_backend(d: &DofMap, k: &CsrMatrix, solver: LinearSolver) -> Result<Backend> {
    Ok(match solver {
        LinearSolver::Direct => Backend::Lu(BorderedLu::factor(d, k)?),
        LinearSolver::Minres { max_iters } => Backend::Minres {
            max_iters,
            precond: block_jacobi(d, k),
        },
    })
}

/// Solves an assembled system from scratch.
pub fn solve_step(
    grid: &StaggeredGrid2D,
    system: &SaddleSystem,
    config: &StepperConfig,
) -> Result<(Velocity, Field2, SolveReport)> {
    let backend = make_backend(&system.dofs, &system.matrix, config.linear_solver)?;
    let (x, iterations, residual) = solve_with(&backend, &system.matrix, &system.rhs(), config.solver_tol)?;
    let d = &system.dofs;
    Ok((
        d.scatter_velocity(grid, &x[..d.n_velocity()]),
        d.scatter_pressure(grid, &x),
        SolveReport {
            residual,
            iterations,
            factorized: matches!(config.linear_solver, LinearSolver::Direct),
        },
    ))
}

/// Result of one time step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub w: Velocity,
    pub z: Field2,
    pub report: SolveReport,
}

/// Stokes stepper holding one assembled matrix and its factorization.
pub struct StokesStepper {
    grid: StaggeredGrid2D,
    config: StepperConfig,
    dofs: DofMap,
    matrix: CsrMatrix,
    backend: Backend,
    steps_taken: std::cell::Cell<usize>,
}

impl StokesStepper {
    pub fn new(grid: &StaggeredGrid2D, config: StepperConfig) -> Result<Self> {
        config.validate()?;
        if grid.nx() < 2 || grid.ny() < 2 {
            return Err(Error::invalid("the Stokes system needs at least 2 cells per direction"));
        }
        let dofs = DofMap::new(grid);
        let blocks = assemble_blocks(grid, &config, &dofs);
        let matrix = full_matrix(&dofs, &blocks);
        let backend = make_backend(&dofs, &matrix, config.linear_solver)?;
        Ok(Self {
            grid: grid.clone(),
            config,
            dofs,
            matrix,
            backend,
            steps_taken: std::cell::Cell::new(0),
        })
    }

    pub fn grid(&self) -> &StaggeredGrid2D {
        &self.grid
    }

    pub fn config(&self) -> &StepperConfig {
        &self.config
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// One step `W_old -> W_new` with momentum loads `loads` at the new time level.
    pub fn step(&self, w_old: &Velocity, loads: &Velocity) -> Result<StepOutput> {
        check_inputs(&self.grid, w_old, loads)?;
        let d = &self.dofs;
        let mut rhs = momentum_rhs(&self.grid, d, self.config.dt, w_old, loads);
        rhs.resize(d.dim(), 0.0);
        let (x, iterations, residual) = solve_with(&self.backend, &self.matrix, &rhs, self.config.solver_tol)?;
        let first = self.steps_taken.get() == 0;
        self.steps_taken.set(self.steps_taken.get() + 1);
        Ok(StepOutput {
            w: d.scatter_velocity(&self.grid, &x[..d.n_velocity()]),
            z: d.scatter_pressure(&self.grid, &x),
            report: SolveReport {
                residual,
                iterations,
                factorized: first && matches!(self.config.linear_solver, LinearSolver::Direct),
            },
        })
    }
}

/// State handed to run observers after each accepted step.
#[derive(Debug, Clone)]
pub struct StepState<'a> {
    pub step: usize,
    pub t: f64,
    pub w: &'a Velocity,
    pub z: &'a Field2,
    pub report: &'a SolveReport,
    /// Picard iterations (1 for Stokes).
    pub picard_iterations: usize,
    /// Final relative Picard update (0 for Stokes).
    pub picard_residual: f64,
}

/// Final state of a run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: usize,
    pub t_final: f64,
    pub w: Velocity,
    pub z: Field2,
}

/// Number of steps `N` with `N dt = t_final`.
pub fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::Config(format!("final time must be positive, got {t_final}")));
    }
    let n = (t_final / dt).round();
    if n < 1.0 || (n * dt - t_final).abs() > 1e-9 * t_final.max(1.0) {
        return Err(Error::Config(format!(
            "final time {t_final} is not an integer multiple of dt = {dt}"
        )));
    }
    Ok(n as usize)
}

/// Generic backward-Euler loop; `advance(w_old, t_new, loads)` returns the new state and
/// its Picard statistics.
pub(crate) fn time_loop(
    grid: &StaggeredGrid2D,
    dt: f64,
    t_final: f64,
    forcing: &PreparedForcing,
    initial: &Velocity,
    mut advance: impl FnMut(&Velocity, f64, &Velocity) -> Result<(StepOutput, usize, f64)>,
    observer: &mut dyn FnMut(&StepState) -> Result<()>,
) -> Result<RunSummary> {
    initial.check(grid)?;
    let steps = step_count(t_final, dt)?;
    let mut w = initial.clone();
    w.enforce_no_slip();
    let mut z = Field2::zeros(grid, Lattice::CELL);
    for n in 1..=steps {
        let t = n as f64 * dt;
        let tag = |e: Error| Error::Step {
            step: n,
            source: Box::new(e),
        };
        let loads = forcing.loads_at(t).map_err(tag)?;
        let (out, picard_iterations, picard_residual) = advance(&w, t, &loads).map_err(tag)?;
        w = out.w;
        z = out.z;
        observer(&StepState {
            step: n,
            t,
            w: &w,
            z: &z,
            report: &out.report,
            picard_iterations,
            picard_residual,
        })?;
    }
    Ok(RunSummary {
        steps,
        t_final,
        w,
        z,
    })
}

/// Runs the Stokes scheme from `initial` to `t_final`, calling `observer` after every step.
///
/// The forcing is reconstructed according to `config.scheme`, whatever mode `forcing` carries.
pub fn run(
    grid: &StaggeredGrid2D,
    config: &StepperConfig,
    forcing: &ForcingSpec,
    t_final: f64,
    initial: &Velocity,
    observer: &mut dyn FnMut(&StepState) -> Result<()>,
) -> Result<RunSummary> {
    let stepper = StokesStepper::new(grid, *config)?;
    let prepared = PreparedForcing::new(&forcing.clone().with_mode(config.scheme.rhs_mode()), grid)?;
    time_loop(
        grid,
        config.dt,
        t_final,
        &prepared,
        initial,
        |w, _, loads| Ok((stepper.step(w, loads)?, 1, 0.0)),
        observer,
    )
}

/// Observer that keeps every step.
pub fn collect_trajectory(
    grid: &StaggeredGrid2D,
    config: &StepperConfig,
    forcing: &ForcingSpec,
    t_final: f64,
    initial: &Velocity,
) -> Result<Vec<(Velocity, Field2)>> {
    let mut traj = vec![(initial.clone(), Field2::zeros(grid, Lattice::CELL))];
    run(grid, config, forcing, t_final, initial, &mut |s| {
        traj.push((s.w.clone(), s.z.clone()));
        Ok(())
    })?;
    Ok(traj)
}

/// Writes `snapshot_<step>.csv` (field CSV format) for the selected steps.
pub struct SnapshotWriter {
    dir: PathBuf,
    steps: BTreeSet<usize>,
    grid: StaggeredGrid2D,
}

impl SnapshotWriter {
    pub fn new(grid: &StaggeredGrid2D, dir: impl Into<PathBuf>, steps: impl IntoIterator<Item = usize>) -> Self {
        Self {
            dir: dir.into(),
            steps: steps.into_iter().collect(),
            grid: grid.clone(),
        }
    }

    pub fn observe(&self, s: &StepState) -> Result<()> {
        if !self.steps.contains(&s.step) {
            return Ok(());
        }
        std::fs::create_dir_all(&self.dir)?;
        let path = self.dir.join(format!("snapshot_{}.csv", s.step));
        let mut buf = Vec::new();
        write_fields_csv(&self.grid, &[&s.w.x, &s.w.y, s.z], &mut buf)?;
        crate::io::write_atomic(&path, &buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{divergence, ip_m, norm_grad, project_mean_zero, sample_cells};
    use crate::forcing::{assemble_rhs, gradient_perturbation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_velocity(grid: &StaggeredGrid2D, seed: u64) -> Velocity {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = DofMap::new(grid);
        let v: Vec<f64> = (0..d.n_velocity()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        d.scatter_velocity(grid, &v)
    }

    fn nonuniform(nx: usize, ny: usize, seed: u64) -> StaggeredGrid2D {
        StaggeredGrid2D::random_nonuniform(nx, ny, (1.0, 1.0), 1.5, seed).unwrap()
    }

    /// Gaussian elimination with partial pivoting on the dense matrix.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n).max_by(|&r, &s| a[r][k].abs().total_cmp(&a[s][k].abs())).unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for r in k + 1..n {
                let f = a[r][k] / a[k][k];
                if f != 0.0 {
                    for c in k..n {
                        a[r][c] -= f * a[k][c];
                    }
                    b[r] -= f * b[k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|c| a[k][c] * x[c]).sum();
            x[k] = (b[k] - s) / a[k][k];
        }
        x
    }

    #[test]
    fn bordered_solve_matches_dense_for_arbitrary_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (nx, ny) in [(4, 4), (5, 3), (6, 7)] {
            let grid = nonuniform(nx, ny, 2);
            let cfg = StepperConfig::new(0.7, 0.1, Scheme::Rmac);
            let w = Velocity::zeros(&grid);
            let sys = assemble(&grid, &cfg, &w, &w).unwrap();
            let lu = BorderedLu::factor(&sys.dofs, &sys.matrix).unwrap();
            // incompatible divergence data and a nonzero mean row exercise the multiplier
            let b: Vec<f64> = (0..sys.matrix.nrows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = lu.solve(&b);
            let dense = sys.matrix.to_dense();
            let want = dense_solve(dense, b.clone());
            let err = x.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-11, "{nx}x{ny}: {err}");
            assert!(x.last().unwrap().abs() > 1e-3);
        }
    }

    #[test]
    fn dimension_and_uniform_diagonal() {
        let grid = StaggeredGrid2D::uniform(4, 4, (1.0, 1.0)).unwrap();
        let cfg = StepperConfig::new(1.0, 1.0, Scheme::Rmac);
        let w = Velocity::zeros(&grid);
        let sys = assemble(&grid, &cfg, &w, &w).unwrap();
        assert_eq!(sys.matrix.nrows(), 3 * 4 + 4 * 3 + 16 + 1);
        let r = sys.dofs.ux(2, 1);
        assert!((sys.a.get(r, r) - 4.0625).abs() < 1e-14);
        let r = sys.dofs.uy(1, 2);
        assert!((sys.a.get(r, r) - 4.0625).abs() < 1e-14);
    }

    #[test]
    fn blocks_are_symmetric_and_adjoint() {
        let grid = nonuniform(6, 5, 3);
        let cfg = StepperConfig::new(0.3, 0.05, Scheme::Rmac);
        let w = Velocity::zeros(&grid);
        let sys = assemble(&grid, &cfg, &w, &w).unwrap();
        assert!(sys.a.asymmetry() <= 1e-13);
        assert!(sys.matrix.asymmetry() <= 1e-13);
        let gt = sys.g.transpose();
        for (r, c, v) in sys.b.triplets() {
            assert_eq!(v, -gt.get(r, c));
        }
        assert_eq!(sys.b.nnz(), gt.nnz());
    }

    #[test]
    fn weighted_divergence_matches_operator() {
        let grid = nonuniform(5, 7, 9);
        let cfg = StepperConfig::new(1.0, 1.0, Scheme::Rmac);
        let w = random_velocity(&grid, 4);
        let sys = assemble(&grid, &cfg, &w, &w).unwrap();
        let bw = sys.b.mul_vec(&sys.dofs.gather(&w));
        let div = divergence(&grid, &w).unwrap();
        for i in 0..grid.nx() {
            for j in 0..grid.ny() {
                let vol = grid.x.cell_width(i) * grid.y.cell_width(j);
                let k = sys.dofs.p(i, j) - sys.dofs.n_velocity();
                assert!((bw[k] - vol * div.get(i, j)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn solenoidal_linear_field_has_zero_constraint_residual() {
        let grid = StaggeredGrid2D::uniform(4, 4, (1.0, 1.0)).unwrap();
        let mut w = Velocity::zeros(&grid);
        for i in 0..=4 {
            for j in 0..4 {
                w.x.set(i, j + 1, grid.x.node(i));
            }
        }
        for i in 0..4 {
            for j in 0..=4 {
                w.y.set(i + 1, j, -grid.y.node(j));
            }
        }
        assert!(divergence(&grid, &w).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let grid = StaggeredGrid2D::uniform(5, 5, (1.0, 1.0)).unwrap();
        let cfg = StepperConfig::new(1.0, 0.1, Scheme::Rmac);
        let w = Velocity::zeros(&grid);
        let sys = assemble(&grid, &cfg, &w, &w).unwrap();
        let (wn, zn, rep) = solve_step(&grid, &sys, &cfg).unwrap();
        assert_eq!(wn, w);
        assert_eq!(zn.max_abs(), 0.0);
        assert_eq!(rep.residual, 0.0);
    }

    fn oracle_case(nx: usize, ny: usize) {
        let grid = nonuniform(nx, ny, 11);
        let cfg = StepperConfig::new(0.7, 0.1, Scheme::Rmac);
        let w_old = random_velocity(&grid, 1);
        let loads = random_velocity(&grid, 2);
        let sys = assemble(&grid, &cfg, &w_old, &loads).unwrap();
        let (w, z, _) = solve_step(&grid, &sys, &cfg).unwrap();
        let x = dense_solve(sys.matrix.to_dense(), sys.rhs());
        let d = sys.dofs;
        let xs: Vec<f64> = d.gather(&w).into_iter().chain(z.values().iter().copied()).collect();
        // pressure storage and dof order coincide (i-major)
        for (a, b) in xs.iter().zip(&x) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn matches_dense_oracle_4x4() {
        oracle_case(4, 4);
    }

    #[test]
    fn matches_dense_oracle_5x3() {
        oracle_case(5, 3);
    }

    #[test]
    fn minres_matches_direct() {
        let grid = nonuniform(8, 8, 5);
        let direct = StepperConfig::new(1.0, 0.02, Scheme::Rmac).with_tol(1e-12);
        let iterative = direct.with_solver(LinearSolver::Minres { max_iters: 5000 }).with_tol(1e-11);
        let w_old = random_velocity(&grid, 7);
        let loads = random_velocity(&grid, 8);
        let a = StokesStepper::new(&grid, direct).unwrap().step(&w_old, &loads).unwrap();
        let b = StokesStepper::new(&grid, iterative).unwrap().step(&w_old, &loads).unwrap();
        let dw = a.w.sub(&b.w).unwrap().max_abs_interior(&grid).unwrap();
        assert!(dw < 1e-8, "{dw}");
        assert!(b.report.iterations > 0);
    }

    #[test]
    fn divergence_and_pressure_mean_after_forced_step() {
        let grid = StaggeredGrid2D::uniform(8, 8, (1.0, 1.0)).unwrap();
        let cfg = StepperConfig::new(1.0, 1.0 / 64.0, Scheme::Rmac);
        let spec = ForcingSpec::new(
            |x, y, _| (3.0 * x).sin() * y * y + 5.0,
            |x, y, _| (2.0 * y).cos() * x,
        );
        let loads = assemble_rhs(&spec, &grid, 0.1).unwrap();
        let stepper = StokesStepper::new(&grid, cfg).unwrap();
        let out = stepper.step(&Velocity::zeros(&grid), &loads).unwrap();
        let scale = out.w.norm(&grid).unwrap().max(1.0);
        let div = divergence(&grid, &out.w).unwrap().max_abs();
        assert!(div <= 10.0 * cfg.solver_tol * scale, "{div}");
        let one = sample_cells(&grid, |_, _| 1.0);
        assert!(ip_m(&grid, &out.z, &one).unwrap().abs() <= 1e-12 * out.z.max_abs().max(1.0));
    }

    #[test]
    fn reused_factorization_is_bit_identical() {
        let grid = nonuniform(6, 6, 2);
        let cfg = StepperConfig::new(0.5, 0.1, Scheme::Rmac);
        let stepper = StokesStepper::new(&grid, cfg).unwrap();
        let mut w_reuse = random_velocity(&grid, 3);
        let mut w_fresh = w_reuse.clone();
        for n in 0..4 {
            let loads = random_velocity(&grid, 100 + n);
            w_reuse = stepper.step(&w_reuse, &loads).unwrap().w;
            let sys = assemble(&grid, &cfg, &w_fresh, &loads).unwrap();
            w_fresh = solve_step(&grid, &sys, &cfg).unwrap().0;
            assert_eq!(w_reuse, w_fresh);
        }
    }

    #[test]
    fn unforced_energy_dissipates_for_any_dt() {
        let grid = nonuniform(7, 6, 4);
        for dt in [0.01, 0.1, 1.0, 10.0] {
            let cfg = StepperConfig::new(0.2, dt, Scheme::Rmac);
            let stepper = StokesStepper::new(&grid, cfg).unwrap();
            let zero = Velocity::zeros(&grid);
            let mut w = random_velocity(&grid, 9);
            for _ in 0..5 {
                let next = stepper.step(&w, &zero).unwrap().w;
                let e_old = 0.5 * w.dot(&grid, &w).unwrap();
                let e_new = 0.5 * next.dot(&grid, &next).unwrap();
                let diss = dt * cfg.mu * norm_grad(&grid, &next).unwrap().powi(2);
                assert!(e_new <= e_old - diss + 10.0 * cfg.solver_tol * e_old.max(1.0), "dt={dt}");
                w = next;
            }
        }
    }

    #[test]
    fn gradient_forcing_is_absorbed_by_pressure() {
        let grid = nonuniform(8, 8, 6);
        let cfg = StepperConfig::new(1.0, 0.05, Scheme::Rmac);
        let phi = |x: f64, y: f64, _t: f64| (x * 3.0).sin() * (y * 2.0).cos() + x * x * y;
        let stepper = StokesStepper::new(&grid, cfg).unwrap();
        let loads = gradient_perturbation(phi, &grid, 0.0);
        let out = stepper.step(&Velocity::zeros(&grid), &loads).unwrap();
        let zphi = project_mean_zero(&grid, &sample_cells(&grid, |x, y| phi(x, y, 0.0))).unwrap();
        assert!(out.w.max_abs_interior(&grid).unwrap() <= 10.0 * cfg.solver_tol);
        let dz = out.z.zip_map(&zphi, |a, b| a - b).unwrap().max_abs();
        assert!(dz <= 10.0 * cfg.solver_tol * zphi.max_abs(), "{dz}");
    }

    #[test]
    fn zero_forcing_run_stays_zero() {
        let grid = StaggeredGrid2D::uniform(4, 4, (1.0, 1.0)).unwrap();
        let cfg = StepperConfig::new(1.0, 0.25, Scheme::Mac);
        let mut count = 0;
        let sum = run(&grid, &cfg, &ForcingSpec::zero(), 1.0, &Velocity::zeros(&grid), &mut |s| {
            count += 1;
            assert_eq!(s.w.max_abs_interior(&grid).unwrap(), 0.0);
            assert_eq!(s.z.max_abs(), 0.0);
            Ok(())
        })
        .unwrap();
        assert_eq!((count, sum.steps), (4, 4));
    }

    #[test]
    fn config_and_time_validation() {
        assert!(StepperConfig::new(0.0, 0.1, Scheme::Rmac).validate().is_err());
        assert!(StepperConfig::new(1.0, -0.1, Scheme::Rmac).validate().is_err());
        assert!(StepperConfig::new(1.0, 0.1, Scheme::Rmac).with_tol(1e-16).validate().is_err());
        assert_eq!(step_count(1.0, 0.01).unwrap(), 100);
        assert!(step_count(1.0, 0.3).is_err());
        assert_eq!("RMAC".parse::<Scheme>().unwrap(), Scheme::Rmac);
    }

    #[test]
    fn lattice_mismatch_is_rejected() {
        let grid = StaggeredGrid2D::uniform(4, 4, (1.0, 1.0)).unwrap();
        let other = StaggeredGrid2D::uniform(5, 4, (1.0, 1.0)).unwrap();
        let cfg = StepperConfig::new(1.0, 0.1, Scheme::Rmac);
        let w = Velocity::zeros(&other);
        assert!(matches!(assemble(&grid, &cfg, &w, &w), Err(Error::Lattice(_))));
    }
}

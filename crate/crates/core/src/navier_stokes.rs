//! Fully implicit RMAC/MAC Navier-Stokes steps.
//!
//! The convective term is the skew-symmetrized form
//!
//! ```text
//! a^x = 1/2 [ W^x D_x(P^x W^x) + P^x d_x((W^x)^2) + P^y(P^x W^y D_y W^x) + d_y(P^y W^x P^x W^y) ]
//! a^y = 1/2 [ W^y D_y(P^y W^y) + P^y d_y((W^y)^2) + P^x(P^y W^x D_x W^y) + d_x(P^y W^x P^x W^y) ]
//! ```
//!
//! where `P` averages nodes to cells or interpolates cells to nodes with the width-weighted
//! rule. Each step is solved by Picard iteration: the convective term is lagged and the
//! Stokes saddle system, whose matrix does not change, is solved again.

use std::io::Write;

use crate::error::{Error, Result};
use crate::field::{
    average_to_cells, d_x, d_y, dual_d_x, dual_d_y, interpolate_to_nodes, Field2, NodeInterp, Stagger,
    Velocity,
};
use crate::forcing::{assemble_rhs, ForcingSpec, PreparedForcing};
use crate::grid::{Axis, StaggeredGrid2D};
use crate::stokes::{time_loop, RunSummary, StepOutput, StepState, StepperConfig, StokesStepper};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearConfig {
    /// Bound on `||W^{k+1} - W^k|| / max(1, ||W^{k+1}||)`.
    pub picard_tol: f64,
    pub max_iters: usize,
    /// Under-relaxation factor in `(0, 1]`.
    pub relaxation: f64,
    /// With `false` every step is a single Stokes solve.
    pub convection: bool,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        Self {
            picard_tol: 1e-10,
            max_iters: 50,
            relaxation: 1.0,
            convection: true,
        }
    }
}

impl NonlinearConfig {
    pub fn validate(&self, solver_tol: f64) -> Result<()> {
        if !(self.picard_tol >= solver_tol && self.picard_tol < 1.0) {
            return Err(Error::Config(format!(
                "picard_tol must lie in [solver_tol = {solver_tol:e}, 1), got {}",
                self.picard_tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::Config(format!(
                "relaxation must lie in (0, 1], got {}",
                self.relaxation
            )));
        }
        Ok(())
    }
}

fn mul(a: &Field2, b: &Field2) -> Result<Field2> {
    a.zip_map(b, |p, q| p * q)
}

/// Convective term `(a^x, a^y)` on the velocity lattices; boundary entries are zero.
pub fn nonlinear_term(grid: &StaggeredGrid2D, w: &Velocity) -> Result<Velocity> {
    nonlinear_term_with(grid, w, NodeInterp::Conservative)
}

/// Convective term with an explicit cell-to-node interpolation rule.
pub fn nonlinear_term_with(grid: &StaggeredGrid2D, w: &Velocity, rule: NodeInterp) -> Result<Velocity> {
    w.check(grid)?;
    let (wx, wy) = (&w.x, &w.y);

    // values of the cross products at cell corners
    let px_wy = interpolate_to_nodes(grid, wy, Axis::X, rule)?;
    let py_wx = interpolate_to_nodes(grid, wx, Axis::Y, rule)?;
    let flux = mul(&py_wx, &px_wy)?;

    let ax = {
        let t1 = mul(wx, &dual_d_x(grid, &average_to_cells(grid, wx, Axis::X)?)?)?;
        let t2 = interpolate_to_nodes(grid, &d_x(grid, &wx.map(|v| v * v))?, Axis::X, rule)?;
        let t3 = average_to_cells(grid, &mul(&px_wy, &dual_d_y(grid, wx)?)?, Axis::Y)?
            .restagger(Axis::Y, Stagger::Walled)?;
        let t4 = d_y(grid, &flux)?.restagger(Axis::Y, Stagger::Walled)?;
        sum_half(&[t1, t2, t3, t4])?
    };
    let ay = {
        let t1 = mul(wy, &dual_d_y(grid, &average_to_cells(grid, wy, Axis::Y)?)?)?;
        let t2 = interpolate_to_nodes(grid, &d_y(grid, &wy.map(|v| v * v))?, Axis::Y, rule)?;
        let t3 = average_to_cells(grid, &mul(&py_wx, &dual_d_x(grid, wy)?)?, Axis::X)?
            .restagger(Axis::X, Stagger::Walled)?;
        let t4 = d_x(grid, &flux)?.restagger(Axis::X, Stagger::Walled)?;
        sum_half(&[t1, t2, t3, t4])?
    };
    let mut out = Velocity { x: ax, y: ay };
    out.check(grid)?;
    out.enforce_no_slip();
    Ok(out)
}

fn sum_half(terms: &[Field2]) -> Result<Field2> {
    let mut acc = terms[0].clone();
    for t in &terms[1..] {
        acc = acc.zip_map(t, |a, b| a + b)?;
    }
    Ok(acc.scaled(0.5))
}

/// Statistics of one nonlinear step.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub iterations: usize,
    /// Relative update after each iteration.
    pub history: Vec<f64>,
    /// `dt ||a(W_new) - a(W_lagged)|| / max(1, ||W_new||)`: the momentum residual of the
    /// unlagged scheme in velocity units.
    pub nonlinear_residual: f64,
}

/// Navier-Stokes stepper: a Stokes stepper plus the Picard loop.
pub struct NavierStokesStepper {
    stokes: StokesStepper,
    nl: NonlinearConfig,
}

impl NavierStokesStepper {
    pub fn new(grid: &StaggeredGrid2D, config: StepperConfig, nl: NonlinearConfig) -> Result<Self> {
        config.validate()?;
        nl.validate(config.solver_tol)?;
        Ok(Self {
            stokes: StokesStepper::new(grid, config)?,
            nl,
        })
    }

    pub fn stokes(&self) -> &StokesStepper {
        &self.stokes
    }

    pub fn nonlinear_config(&self) -> &NonlinearConfig {
        &self.nl
    }

    /// One step with momentum loads `loads` at the new time level.
    pub fn step(&self, w_old: &Velocity, loads: &Velocity) -> Result<(StepOutput, IterationReport)> {
        if !self.nl.convection {
            let out = self.stokes.step(w_old, loads)?;
            return Ok((
                out,
                IterationReport {
                    iterations: 1,
                    history: vec![0.0],
                    nonlinear_residual: 0.0,
                },
            ));
        }
        let grid = self.stokes.grid();
        let dt = self.stokes.config().dt;
        let omega = self.nl.relaxation;
        let mut w = w_old.clone();
        let mut alpha = nonlinear_term(grid, &w)?;
        let mut history = Vec::new();
        for k in 1..=self.nl.max_iters {
            let f = loads.zip_map(&alpha, |g, a| g - a)?;
            let mut out = self.stokes.step(w_old, &f)?;
            if omega < 1.0 {
                out.w = out.w.zip_map(&w, |new, old| omega * new + (1.0 - omega) * old)?;
            }
            let scale = out.w.norm(grid)?.max(1.0);
            let update = out.w.sub(&w)?.norm(grid)? / scale;
            history.push(update);
            w = out.w.clone();
            let alpha_new = nonlinear_term(grid, &w)?;
            let finite = alpha_new.x.values().iter().chain(alpha_new.y.values()).all(|v| v.is_finite());
            if !(update.is_finite() && finite) {
                break;
            }
            if update <= self.nl.picard_tol {
                let nonlinear_residual = dt * alpha_new.sub(&alpha)?.norm(grid)? / scale;
                return Ok((
                    out,
                    IterationReport {
                        iterations: k,
                        history,
                        nonlinear_residual,
                    },
                ));
            }
            alpha = alpha_new;
        }
        Err(Error::Nonconvergence {
            iterations: history.len(),
            history,
        })
    }
}

/// One step from scratch: `W_old` at `t_new - dt` to `t_new`, forcing reconstructed per scheme.
pub fn ns_step(
    grid: &StaggeredGrid2D,
    config: &StepperConfig,
    nl: &NonlinearConfig,
    w_old: &Velocity,
    forcing: &ForcingSpec,
    t_new: f64,
) -> Result<(StepOutput, IterationReport)> {
    let stepper = NavierStokesStepper::new(grid, *config, *nl)?;
    let loads = assemble_rhs(&forcing.clone().with_mode(config.scheme.rhs_mode()), grid, t_new)?;
    stepper.step(w_old, &loads)
}

/// Runs the Navier-Stokes scheme from `initial` to `t_final`.
pub fn run(
    grid: &StaggeredGrid2D,
    config: &StepperConfig,
    nl: &NonlinearConfig,
    forcing: &ForcingSpec,
    t_final: f64,
    initial: &Velocity,
    observer: &mut dyn FnMut(&StepState) -> Result<()>,
) -> Result<RunSummary> {
    let stepper = NavierStokesStepper::new(grid, *config, *nl)?;
    let prepared = PreparedForcing::new(&forcing.clone().with_mode(config.scheme.rhs_mode()), grid)?;
    time_loop(
        grid,
        config.dt,
        t_final,
        &prepared,
        initial,
        |w, _, loads| {
            let (out, rep) = stepper.step(w, loads)?;
            let last = rep.history.last().copied().unwrap_or(0.0);
            Ok((out, rep.iterations, last))
        },
        observer,
    )
}

/// CSV log of per-step iteration statistics: `step,t,picard_iterations,picard_residual,solver_residual`.
pub struct IterationLog<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> IterationLog<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["step", "t", "picard_iterations", "picard_residual", "solver_residual"])?;
        Ok(Self { writer })
    }

    pub fn record(&mut self, s: &StepState) -> Result<()> {
        self.writer.write_record([
            s.step.to_string(),
            format!("{:.12e}", s.t),
            s.picard_iterations.to_string(),
            format!("{:.6e}", s.picard_residual),
            format!("{:.6e}", s.report.residual),
        ])?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.writer.flush()?;
        self.writer
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

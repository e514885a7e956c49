//! Conserved quantities and run-level structure checks.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{discrete_curl, divergence, ip_mt, ip_tm, norm_grad, Field2, Lattice, Velocity};
use crate::grid::StaggeredGrid2D;
use crate::stokes::StepState;

/// `1/2 (||W^x||^2_{T,M} + ||W^y||^2_{M,T})`.
pub fn kinetic_energy(grid: &StaggeredGrid2D, w: &Velocity) -> Result<f64> {
    Ok(0.5 * w.dot(grid, w)?)
}

/// `((W^x, 1)_{T,M}, (W^y, 1)_{M,T})`.
pub fn momentum(grid: &StaggeredGrid2D, w: &Velocity) -> Result<(f64, f64)> {
    w.check(grid)?;
    let one_x = Field2::from_fn(grid, Lattice::X_VELOCITY, |_, _| 1.0);
    let one_y = Field2::from_fn(grid, Lattice::Y_VELOCITY, |_, _| 1.0);
    Ok((ip_tm(grid, &w.x, &one_x)?, ip_mt(grid, &w.y, &one_y)?))
}

/// `(W^x, y)_{T,M} - (W^y, x)_{M,T}` with `y = y_{j+1/2}`, `x = x_{i+1/2}`.
pub fn angular_momentum(grid: &StaggeredGrid2D, w: &Velocity) -> Result<f64> {
    w.check(grid)?;
    let y = Field2::from_fn(grid, Lattice::X_VELOCITY, |_, y| y);
    let x = Field2::from_fn(grid, Lattice::Y_VELOCITY, |x, _| x);
    Ok(ip_tm(grid, &w.x, &y)? - ip_mt(grid, &w.y, &x)?)
}

/// Largest `|d_x W^x + d_y W^y|` over cells.
pub fn max_mass_residual(grid: &StaggeredGrid2D, w: &Velocity) -> Result<f64> {
    Ok(divergence(grid, w)?.max_abs())
}

/// Divergence-free field from a random corner stream function that vanishes on the outer
/// `margin` rings of corners, so the velocity is zero on the outer `margin - 1` layers.
pub fn compact_random_velocity(grid: &StaggeredGrid2D, margin: usize, amplitude: f64, seed: u64) -> Result<Velocity> {
    if margin == 0 || grid.nx() < 2 * margin || grid.ny() < 2 * margin {
        return Err(Error::invalid(format!(
            "a {}x{} grid has no interior corners {margin} rings from the boundary",
            grid.nx(),
            grid.ny()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut psi = Field2::zeros(grid, Lattice::CORNER);
    for i in margin..=grid.nx() - margin {
        for j in margin..=grid.ny() - margin {
            psi.set(i, j, amplitude * rng.gen_range(-1.0..1.0));
        }
    }
    discrete_curl(grid, &psi)
}

/// Swirling vortex with stream function `amplitude (1 - r^2/R^2)^4` inside radius `R` of the
/// domain center and zero outside.
pub fn compact_vortex(grid: &StaggeredGrid2D, radius: f64, amplitude: f64) -> Result<Velocity> {
    let (cx, cy) = (
        0.5 * (grid.x.start() + grid.x.end()),
        0.5 * (grid.y.start() + grid.y.end()),
    );
    if !(radius > 0.0) || radius > 0.5 * grid.x.length().min(grid.y.length()) {
        return Err(Error::invalid(format!("vortex radius {radius} does not fit in the domain")));
    }
    let psi = Field2::from_fn(grid, Lattice::CORNER, |x, y| {
        let r2 = ((x - cx).powi(2) + (y - cy).powi(2)) / (radius * radius);
        if r2 < 1.0 {
            amplitude * (1.0 - r2).powi(4)
        } else {
            0.0
        }
    });
    discrete_curl(grid, &psi)
}

/// What the checker may assume about a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub mu: f64,
    pub dt: f64,
    /// Forced runs skip the energy law.
    pub forced: bool,
    /// Momentum laws are only checked for compactly supported data.
    pub compact_support: bool,
    pub tolerances: Tolerances,
}

/// Scale-relative tolerances (multiplied by `max(1, ||W||)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub energy: f64,
    pub momentum: f64,
    pub mass: f64,
}

impl Tolerances {
    /// 100x the solver tolerance for the momentum laws, 10x for energy and mass.
    pub fn from_solver_tol(tol: f64) -> Self {
        Self {
            energy: 10.0 * tol,
            momentum: 100.0 * tol,
            mass: 10.0 * tol,
        }
    }
}

/// Per-step series and violation flags of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConservationReport {
    pub initial_energy: f64,
    pub initial_momentum: (f64, f64),
    pub initial_angular_momentum: f64,
    pub t: Vec<f64>,
    pub kinetic_energy: Vec<f64>,
    /// `dt mu ||D W^n||^2`.
    pub dissipation: Vec<f64>,
    pub momentum_x: Vec<f64>,
    pub momentum_y: Vec<f64>,
    pub angular_momentum: Vec<f64>,
    pub max_mass_residual: Vec<f64>,
    pub energy_flags: Vec<bool>,
    pub momentum_flags: Vec<bool>,
    pub mass_flags: Vec<bool>,
    /// Largest per-step drifts seen.
    pub max_momentum_drift: f64,
    pub max_angular_drift: f64,
    /// Largest `E^n - E^{n-1}` (nonpositive when energy never grows).
    pub max_energy_increase: f64,
}

impl ConservationReport {
    pub fn steps(&self) -> usize {
        self.kinetic_energy.len()
    }

    pub fn energy_ok(&self) -> bool {
        !self.energy_flags.iter().any(|&f| f)
    }

    pub fn momentum_ok(&self) -> bool {
        !self.momentum_flags.iter().any(|&f| f)
    }

    pub fn mass_ok(&self) -> bool {
        !self.mass_flags.iter().any(|&f| f)
    }

    pub fn ok(&self) -> bool {
        self.energy_ok() && self.momentum_ok() && self.mass_ok()
    }

    /// One CSV row per step.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "step",
            "t",
            "kinetic_energy",
            "dissipation",
            "momentum_x",
            "momentum_y",
            "angular_momentum",
            "max_mass_residual",
            "energy_flag",
            "momentum_flag",
            "mass_flag",
        ])?;
        for n in 0..self.steps() {
            w.write_record([
                (n + 1).to_string(),
                format!("{:.12e}", self.t[n]),
                format!("{:.12e}", self.kinetic_energy[n]),
                format!("{:.12e}", self.dissipation[n]),
                format!("{:.12e}", self.momentum_x[n]),
                format!("{:.12e}", self.momentum_y[n]),
                format!("{:.12e}", self.angular_momentum[n]),
                format!("{:.6e}", self.max_mass_residual[n]),
                (self.energy_flags[n] as u8).to_string(),
                (self.momentum_flags[n] as u8).to_string(),
                (self.mass_flags[n] as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Accumulates a [`ConservationReport`] step by step; usable as a run observer.
pub struct ConservationMonitor {
    grid: StaggeredGrid2D,
    opts: CheckOptions,
    report: ConservationReport,
    prev_energy: f64,
    prev_momentum: (f64, f64),
    prev_angular: f64,
}

impl ConservationMonitor {
    pub fn new(grid: &StaggeredGrid2D, initial: &Velocity, opts: CheckOptions) -> Result<Self> {
        let e = kinetic_energy(grid, initial)?;
        let m = momentum(grid, initial)?;
        let a = angular_momentum(grid, initial)?;
        Ok(Self {
            grid: grid.clone(),
            opts,
            report: ConservationReport {
                initial_energy: e,
                initial_momentum: m,
                initial_angular_momentum: a,
                max_energy_increase: f64::NEG_INFINITY,
                ..Default::default()
            },
            prev_energy: e,
            prev_momentum: m,
            prev_angular: a,
        })
    }

    pub fn record(&mut self, t: f64, w: &Velocity) -> Result<()> {
        let g = &self.grid;
        let tol = self.opts.tolerances;
        let scale = w.norm(g)?.max(1.0);
        let e = kinetic_energy(g, w)?;
        let diss = self.opts.dt * self.opts.mu * norm_grad(g, w)?.powi(2);
        let m = momentum(g, w)?;
        let a = angular_momentum(g, w)?;
        let div = max_mass_residual(g, w)?;

        let r = &mut self.report;
        r.t.push(t);
        r.kinetic_energy.push(e);
        r.dissipation.push(diss);
        r.momentum_x.push(m.0);
        r.momentum_y.push(m.1);
        r.angular_momentum.push(a);
        r.max_mass_residual.push(div);

        r.max_energy_increase = r.max_energy_increase.max(e - self.prev_energy);
        let energy_bad = !self.opts.forced && e > self.prev_energy - diss + tol.energy * scale * scale;
        r.energy_flags.push(energy_bad);

        let dm = (m.0 - self.prev_momentum.0).abs().max((m.1 - self.prev_momentum.1).abs());
        let da = (a - self.prev_angular).abs();
        r.max_momentum_drift = r.max_momentum_drift.max(dm);
        r.max_angular_drift = r.max_angular_drift.max(da);
        let momentum_bad =
            !self.opts.forced && self.opts.compact_support && dm.max(da) > tol.momentum * scale;
        r.momentum_flags.push(momentum_bad);
        r.mass_flags.push(div > tol.mass * scale);

        self.prev_energy = e;
        self.prev_momentum = m;
        self.prev_angular = a;
        Ok(())
    }

    pub fn observe(&mut self, s: &StepState) -> Result<()> {
        self.record(s.t, s.w)
    }

    pub fn finish(self) -> ConservationReport {
        self.report
    }
}

/// Evaluates a stored trajectory `W^0, W^1, ...` with steps `dt` apart.
pub fn check_run(grid: &StaggeredGrid2D, trajectory: &[Velocity], opts: CheckOptions) -> Result<ConservationReport> {
    let Some((first, rest)) = trajectory.split_first() else {
        return Ok(ConservationReport::default());
    };
    let mut mon = ConservationMonitor::new(grid, first, opts)?;
    for (n, w) in rest.iter().enumerate() {
        mon.record((n + 1) as f64 * opts.dt, w)?;
    }
    Ok(mon.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::ForcingSpec;
    use crate::stokes::{collect_trajectory, DofMap, Scheme, StepperConfig};

    fn random_field(g: &StaggeredGrid2D, seed: u64) -> Velocity {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = DofMap::new(g);
        let v: Vec<f64> = (0..d.n_velocity()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        d.scatter_velocity(g, &v)
    }

    fn opts(forced: bool, compact: bool) -> CheckOptions {
        CheckOptions {
            mu: 1.0,
            dt: 0.1,
            forced,
            compact_support: compact,
            tolerances: Tolerances::from_solver_tol(1e-10),
        }
    }

    #[test]
    fn compact_generators_are_solenoidal_and_vanish_near_walls() {
        let g = StaggeredGrid2D::random_nonuniform(12, 10, (1.0, 1.0), 1.5, 4).unwrap();
        let w = compact_random_velocity(&g, 3, 0.5, 9).unwrap();
        assert!(max_mass_residual(&g, &w).unwrap() < 1e-12);
        for i in 0..=12 {
            for j in 1..=10 {
                if i < 3 || i > 9 || j < 3 || j > 8 {
                    assert_eq!(w.x.get(i, j), 0.0, "({i},{j})");
                }
            }
        }
        assert!(w.max_abs_interior(&g).unwrap() > 0.1);
        assert!(compact_random_velocity(&g, 6, 1.0, 0).is_err());

        let u = StaggeredGrid2D::uniform(16, 16, (1.0, 1.0)).unwrap();
        let v = compact_vortex(&u, 0.3, 1.0).unwrap();
        assert!(max_mass_residual(&u, &v).unwrap() < 1e-12);
        let (mx, my) = momentum(&u, &v).unwrap();
        assert!(mx.abs() < 1e-14 && my.abs() < 1e-14);
        assert!(angular_momentum(&u, &v).unwrap().abs() > 1e-2);
        assert_eq!(v.x.get(1, 8), 0.0);
        assert!(compact_vortex(&u, 0.6, 1.0).is_err());
    }

    #[test]
    fn zero_field_has_zero_invariants() {
        let g = StaggeredGrid2D::random_nonuniform(6, 5, (1.0, 2.0), 1.5, 1).unwrap();
        let w = Velocity::zeros(&g);
        assert_eq!(kinetic_energy(&g, &w).unwrap(), 0.0);
        assert_eq!(momentum(&g, &w).unwrap(), (0.0, 0.0));
        assert_eq!(angular_momentum(&g, &w).unwrap(), 0.0);
    }

    #[test]
    fn unit_x_velocity_energy_is_half_the_interior_weight() {
        let g = StaggeredGrid2D::uniform(4, 4, (1.0, 1.0)).unwrap();
        let w = Velocity::sample(&g, |_, _| (1.0, 0.0));
        // interior nodes x_1..x_3 with h = 1/4, all four cells in y: weight 3/4
        assert!((kinetic_energy(&g, &w).unwrap() - 0.375).abs() < 1e-15);
    }

    #[test]
    fn evaluators_match_direct_sums() {
        let g = StaggeredGrid2D::random_nonuniform(7, 6, (1.0, 1.0), 1.5, 4).unwrap();
        let w = random_field(&g, 3);
        let (mut e, mut mx, mut my, mut a) = (0.0, 0.0, 0.0, 0.0);
        for i in 1..g.nx() {
            for j in 0..g.ny() {
                let wt = g.x.node_width(i) * g.y.cell_width(j);
                let v = w.x.get(i, j + 1);
                e += 0.5 * wt * v * v;
                mx += wt * v;
                a += wt * v * g.y.midpoint(j);
            }
        }
        for i in 0..g.nx() {
            for j in 1..g.ny() {
                let wt = g.x.cell_width(i) * g.y.node_width(j);
                let v = w.y.get(i + 1, j);
                e += 0.5 * wt * v * v;
                my += wt * v;
                a -= wt * v * g.x.midpoint(i);
            }
        }
        let rel = |p: f64, q: f64| (p - q).abs() / q.abs().max(1e-300);
        assert!(rel(kinetic_energy(&g, &w).unwrap(), e) <= 1e-14);
        let m = momentum(&g, &w).unwrap();
        assert!(rel(m.0, mx) <= 1e-14 && rel(m.1, my) <= 1e-14);
        assert!(rel(angular_momentum(&g, &w).unwrap(), a) <= 1e-14);
    }

    #[test]
    fn odd_field_has_zero_x_momentum() {
        let g = StaggeredGrid2D::uniform(8, 8, (1.0, 1.0)).unwrap();
        let w = Velocity::sample(&g, |x, y| ((x - 0.5) * (1.0 + y), 0.0));
        assert!(momentum(&g, &w).unwrap().0.abs() < 1e-15);
    }

    #[test]
    fn stokes_run_energy_is_nonincreasing() {
        let g = StaggeredGrid2D::random_nonuniform(8, 8, (1.0, 1.0), 1.5, 2).unwrap();
        let cfg = StepperConfig::new(1.0, 0.1, Scheme::Rmac);
        let w0 = random_field(&g, 5);
        let traj: Vec<Velocity> = collect_trajectory(&g, &cfg, &ForcingSpec::zero(), 1.0, &w0)
            .unwrap()
            .into_iter()
            .map(|(w, _)| w)
            .collect();
        let rep = check_run(&g, &traj, opts(false, false)).unwrap();
        assert_eq!(rep.steps(), 10);
        assert!(rep.energy_ok() && rep.mass_ok(), "{rep:?}");
        assert!(rep.max_energy_increase < 0.0);
    }

    #[test]
    fn forced_runs_skip_the_energy_law() {
        let g = StaggeredGrid2D::uniform(6, 6, (1.0, 1.0)).unwrap();
        let cfg = StepperConfig::new(1.0, 0.1, Scheme::Rmac);
        let f = ForcingSpec::new(|_, y, _| 50.0 * y, |x, _, _| -50.0 * x);
        let traj: Vec<Velocity> = collect_trajectory(&g, &cfg, &f, 0.5, &Velocity::zeros(&g))
            .unwrap()
            .into_iter()
            .map(|(w, _)| w)
            .collect();
        let rep = check_run(&g, &traj, opts(true, false)).unwrap();
        assert!(rep.max_energy_increase > 0.0);
        assert!(rep.ok());
    }

    #[test]
    fn csv_has_one_row_per_step() {
        let g = StaggeredGrid2D::uniform(4, 4, (1.0, 1.0)).unwrap();
        let traj = vec![random_field(&g, 1), random_field(&g, 2), random_field(&g, 3)];
        let rep = check_run(&g, &traj, opts(true, false)).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("step,t,kinetic_energy"));
    }
}

//! Unforced runs from a compactly supported vortex: kinetic energy decays, linear and angular
//! momentum stay put, and the velocity stays discretely divergence free.
//!
//! Usage: `cargo run --release --example conservation`

use rmac::diagnostics::{compact_vortex, CheckOptions, ConservationMonitor, Tolerances};
use rmac::stokes::{self, StepState, DEFAULT_SOLVER_TOL};
use rmac::{navier_stokes, ForcingSpec, NonlinearConfig, Scheme, StaggeredGrid2D, StepperConfig};

fn main() -> rmac::Result<()> {
    let grid = StaggeredGrid2D::uniform(32, 32, (1.0, 1.0))?;
    let initial = compact_vortex(&grid, 0.3, 0.1)?;
    let (mu, dt, t) = (1e-4, 1e-3, 0.01);
    let config = StepperConfig::new(mu, dt, Scheme::Rmac);
    let forcing = ForcingSpec::zero();

    for navier in [false, true] {
        let opts = CheckOptions {
            mu,
            dt,
            forced: false,
            compact_support: true,
            tolerances: Tolerances::from_solver_tol(DEFAULT_SOLVER_TOL),
        };
        let mut monitor = ConservationMonitor::new(&grid, &initial, opts)?;
        let mut obs = |s: &StepState| monitor.observe(s);
        if navier {
            navier_stokes::run(&grid, &config, &NonlinearConfig::default(), &forcing, t, &initial, &mut obs)?;
        } else {
            stokes::run(&grid, &config, &forcing, t, &initial, &mut obs)?;
        }
        let r = monitor.finish();
        println!("{}", if navier { "Navier-Stokes" } else { "Stokes" });
        println!("  energy {:.6e} -> {:.6e}", r.initial_energy, r.kinetic_energy.last().unwrap());
        println!("  max per-step momentum drift {:.1e}, angular {:.1e}", r.max_momentum_drift, r.max_angular_drift);
        println!(
            "  max divergence {:.1e}, all checks ok: {}",
            r.max_mass_residual.iter().cloned().fold(0.0, f64::max),
            r.ok()
        );
    }
    Ok(())
}

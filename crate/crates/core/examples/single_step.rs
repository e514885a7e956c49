//! Assembles one backward-Euler Stokes step, solves it, and inspects the saddle system.
//!
//! Usage: `cargo run --example single_step`

use rmac::diagnostics::max_mass_residual;
use rmac::experiments::example1;
use rmac::forcing::assemble_rhs;
use rmac::stokes::{assemble, solve_step};
use rmac::{Scheme, StaggeredGrid2D, StepperConfig};

fn main() -> rmac::Result<()> {
    let grid = StaggeredGrid2D::random_nonuniform(8, 6, (1.0, 1.0), 1.5, 1)?;
    let case = example1();
    let dt = 0.01;
    let config = StepperConfig::new(case.mu, dt, Scheme::Rmac);
    let w0 = case.initial_velocity(&grid)?;
    let loads = assemble_rhs(&case.forcing(), &grid, dt)?;

    let system = assemble(&grid, &config, &w0, &loads)?;
    println!(
        "{} unknowns, {} nonzeros, asymmetry {:.1e}",
        system.matrix.nrows(),
        system.matrix.nnz(),
        system.matrix.asymmetry()
    );
    let (w1, z1, report) = solve_step(&grid, &system, &config)?;
    println!("relative residual {:.1e} after {} refinement sweeps", report.residual, report.iterations);
    println!("max divergence {:.1e}", max_mass_residual(&grid, &w1)?);

    let exact_u = case.sample_velocity(&grid, dt);
    let exact_p = rmac::field::project_mean_zero(&grid, &rmac::field::sample_cells(&grid, |x, y| case.pressure(x, y, dt)))?;
    let eu = w1.sub(&exact_u)?;
    println!(
        "after one step: max velocity error {:.2e}, max pressure error {:.2e}",
        eu.x.max_abs().max(eu.y.max_abs()),
        z1.zip_map(&exact_p, |a, b| a - b)?.max_abs()
    );
    Ok(())
}

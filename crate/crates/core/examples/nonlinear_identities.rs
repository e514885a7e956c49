//! The discrete convective term is orthogonal to the velocity and to constant fields on any
//! grid, and to rigid rotation on uniform grids.
//!
//! Usage: `cargo run --release --example nonlinear_identities`

use rmac::diagnostics::compact_random_velocity;
use rmac::navier_stokes::nonlinear_term;
use rmac::{StaggeredGrid2D, Velocity};

fn probe(grid: &StaggeredGrid2D, f: impl Fn(f64, f64) -> (f64, f64)) -> Velocity {
    let mut v = Velocity::sample(grid, f);
    v.enforce_no_slip();
    v
}

fn report(name: &str, grid: &StaggeredGrid2D) -> rmac::Result<()> {
    let w = compact_random_velocity(grid, 3, 1.0, 42)?;
    let alpha = nonlinear_term(grid, &w)?;
    let rel = |v: &Velocity| -> rmac::Result<f64> {
        Ok(alpha.dot(grid, v)?.abs() / (alpha.norm(grid)? * v.norm(grid)?))
    };
    println!("{name}");
    println!("  (alpha, W)     {:.1e}", rel(&w)?);
    println!("  (alpha, e_x)   {:.1e}", rel(&probe(grid, |_, _| (1.0, 0.0)))?);
    println!("  (alpha, e_y)   {:.1e}", rel(&probe(grid, |_, _| (0.0, 1.0)))?);
    println!("  (alpha, x-hat) {:.1e}", rel(&probe(grid, |x, y| (0.5 - y, x - 0.5)))?);
    Ok(())
}

fn main() -> rmac::Result<()> {
    report("uniform 12x12", &StaggeredGrid2D::uniform(12, 12, (1.0, 1.0))?)?;
    report("non-uniform 12x12", &StaggeredGrid2D::random_nonuniform(12, 12, (1.0, 1.0), 1.5, 3)?)
}

//! RMAC velocity error as the viscosity decreases, for Stokes (Example 1) and Navier-Stokes
//! (Example 2).
//!
//! Usage: `cargo run --release --example viscosity_robustness [N]` (default 20).

use rmac::experiments::{example1, example2, robustness_sweep, RunSettings, SweepAxis};
use rmac::{Scheme, StaggeredGrid2D};

fn main() -> rmac::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(20, |s| s.parse().expect("N"));
    let mus = SweepAxis::Mu.default_values();
    let settings = RunSettings::new(Scheme::Rmac, 1.0 / (n * n) as f64);

    let nonuniform = StaggeredGrid2D::random_nonuniform(n, n, (1.0, 1.0), 1.5, 2024)?;
    let uniform = StaggeredGrid2D::uniform(n, n, (1.0, 1.0))?;
    let stokes = robustness_sweep(&example1(), &settings, &nonuniform, SweepAxis::Mu, &mus)?;
    let ns = robustness_sweep(&example2(), &settings, &uniform, SweepAxis::Mu, &mus)?;

    println!("RMAC, {n}x{n}, lambda = 1, dt = 1/N^2");
    println!("{:>8}  {:>22}  {:>22}", "mu", "Stokes ||e_u||_l2", "Navier-Stokes ||e_u||_l2");
    for ((mu, s), q) in mus.iter().zip(&stokes).zip(&ns) {
        println!("{mu:>8.0e}  {:>22.4e}  {:>22.4e}", s.eu_l2, q.eu_l2);
    }
    Ok(())
}

//! Velocity error of RMAC and MAC as the pressure amplitude grows, on a fixed non-uniform grid.
//!
//! Usage: `cargo run --release --example pressure_robustness [N]` (default 20).

use rmac::experiments::{example1, robustness_sweep, RunSettings, SweepAxis};
use rmac::{Scheme, StaggeredGrid2D};

fn main() -> rmac::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(20, |s| s.parse().expect("N"));
    let grid = StaggeredGrid2D::random_nonuniform(n, n, (1.0, 1.0), 1.5, 2024)?;
    let lambdas = SweepAxis::Lambda.default_values();

    println!("Example 1, {n}x{n} non-uniform, mu = 1, dt = 1/N^2");
    println!("{:>8}  {:>12}  {:>12}", "lambda", "RMAC ||e_u||", "MAC ||e_u||");
    let sweep = |scheme| {
        let settings = RunSettings::new(scheme, 1.0 / (n * n) as f64);
        robustness_sweep(&example1(), &settings, &grid, SweepAxis::Lambda, &lambdas)
    };
    let (rmac, mac) = (sweep(Scheme::Rmac)?, sweep(Scheme::Mac)?);
    for ((l, r), m) in lambdas.iter().zip(&rmac).zip(&mac) {
        println!("{l:>8.0e}  {:>12.4e}  {:>12.4e}", r.eu_l2, m.eu_l2);
    }
    Ok(())
}

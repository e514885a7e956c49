//! Example 2 (Navier-Stokes) on uniform grids with the RMAC scheme, reported in l-infinity norms.
//!
//! Usage: `cargo run --release --example navier_stokes_convergence [max_level]` (default 40).

use rmac::experiments::{convergence_study, example2, format_rates_table, ErrorNorm, GridFamily, RunSettings};
use rmac::Scheme;

fn main() -> rmac::Result<()> {
    let max: usize = std::env::args().nth(1).map(|s| s.parse().expect("max level")).unwrap_or(40);
    let levels: Vec<usize> = [5, 10, 20, 40, 80].into_iter().filter(|&n| n <= max).collect();

    let start = std::time::Instant::now();
    let records = convergence_study(
        &example2(),
        &RunSettings::new(Scheme::Rmac, 1.0),
        GridFamily::Uniform,
        &levels,
        ErrorNorm::Linf,
    )?;
    println!("Example 2, rmac, Navier-Stokes, uniform, dt = 1/N^2, T = 1");
    print!("{}", format_rates_table(&records, ErrorNorm::Linf));
    println!("total {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}

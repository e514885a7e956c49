//! Example 1 (Stokes) on nested non-uniform grids, RMAC scheme.
//!
//! Usage: `cargo run --release --example stokes_convergence [max_level] [mac]`
//! where `max_level` defaults to 40; pass 80 for the full table.

use rmac::experiments::{convergence_study, example1, format_rates_table, ErrorNorm, GridFamily, RunSettings};
use rmac::Scheme;

fn main() -> rmac::Result<()> {
    let mut args = std::env::args().skip(1);
    let max: usize = args.next().map(|s| s.parse().expect("max level")).unwrap_or(40);
    let scheme = if args.next().as_deref() == Some("mac") { Scheme::Mac } else { Scheme::Rmac };

    let levels: Vec<usize> = [5, 10, 20, 40, 80].into_iter().filter(|&n| n <= max).collect();
    let family = GridFamily::Nested { ratio: 1.5, seed: 2024 };
    let settings = RunSettings::new(scheme, 1.0);

    let start = std::time::Instant::now();
    let records = convergence_study(&example1(), &settings, family, &levels, ErrorNorm::L2)?;
    println!("Example 1, {}, non-uniform (ratio >= 1.5), dt = 1/N^2, T = 1", scheme.name());
    print!("{}", format_rates_table(&records, ErrorNorm::L2));
    for r in &records {
        println!("  {}x{}: {:.1} s", r.nx, r.ny, r.wallclock_s.unwrap_or(f64::NAN));
    }
    println!("total {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}

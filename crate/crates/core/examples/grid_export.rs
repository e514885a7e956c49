//! Builds a seeded non-uniform grid, prints its width statistics and round-trips it through the
//! text format used for reproducible experiments.
//!
//! Usage: `cargo run --example grid_export [N] [ratio] [seed] [path]`

use rmac::StaggeredGrid2D;

fn main() -> rmac::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map_or(10, |s| s.parse().expect("N"));
    let ratio: f64 = args.get(1).map_or(1.5, |s| s.parse().expect("ratio"));
    let seed: u64 = args.get(2).map_or(2024, |s| s.parse().expect("seed"));

    let grid = StaggeredGrid2D::random_nonuniform(n, n, (1.0, 1.0), ratio, seed)?;
    println!("{n}x{n} cells, seed {seed}");
    println!("  x widths: min {:.4} max {:.4} ratio {:.3}", grid.x.min_width(), grid.x.max_width(), grid.x.width_ratio());
    println!("  y widths: min {:.4} max {:.4} ratio {:.3}", grid.y.min_width(), grid.y.max_width(), grid.y.width_ratio());
    println!("  mesh size {:.4}, regularity ratio {:.3}", grid.mesh_size(), grid.regularity_ratio());

    let refined = grid.refined();
    println!("  refined: {}x{}, every coarse node kept", refined.nx(), refined.ny());

    let text = grid.to_text();
    assert_eq!(StaggeredGrid2D::from_text(&text)?, grid);
    match args.get(3) {
        Some(path) => {
            grid.write_text(path)?;
            println!("written to {path}");
        }
        None => print!("{text}"),
    }
    Ok(())
}

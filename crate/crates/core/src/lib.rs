//! Staggered-grid (MAC) solvers for the time-dependent Stokes and Navier-Stokes equations
//! on non-uniform rectangular grids, with a pressure-robust right-hand side reconstruction.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod field;
pub mod forcing;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod navier_stokes;
pub mod stokes;

pub use error::{Error, Result};
pub use field::{Field2, Lattice, NodeInterp, Stagger, Velocity};
pub use forcing::{ForcingSpec, PreparedForcing, RhsMode};
pub use grid::{Axis, Axis1D, StaggeredGrid2D};
pub use stokes::{LinearSolver, Scheme, StepperConfig, StokesStepper};
pub use navier_stokes::{NavierStokesStepper, NonlinearConfig};

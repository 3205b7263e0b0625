//! Numerical laboratory for divergence-form parabolic equations with rough
//! coefficients: a finite-volume solver, fundamental-solution estimates and
//! empirical certificates for the classical regularity theorems.

pub mod analytic;
pub mod certify;
pub mod config;
pub mod error;
pub mod families;
pub mod field;
pub mod grid;
pub mod hashing;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod report;
pub mod runner;
pub mod solver;
pub mod structure;
pub mod widder;

pub use error::{LabError, Result};
pub use field::{Field, SolutionField};
pub use grid::{CellSet, Cylinder, CylinderKind, GridDescriptor, SpaceTimeGrid};
pub use solver::{Boundary, ProblemSpec, SolverConfig};
pub use structure::{LinearCoefficients, StructureBounds, StructureFunctions};

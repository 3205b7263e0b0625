//! Problem fixtures shared by the benchmarks.

use parabolic_core::analytic::AnalyticFn;
use parabolic_core::families::checkerboard;
use parabolic_core::{Boundary, LinearCoefficients, ProblemSpec, SpaceTimeGrid};

/// Unit cube with `cells` cells per axis and `steps` time steps of size `h²`.
pub fn unit_grid(n: usize, cells: usize, steps: usize) -> SpaceTimeGrid {
    let h = 1.0 / cells as f64;
    let dt = h * h;
    SpaceTimeGrid::new(n, &vec![(0.0, 1.0); n], h, dt * steps as f64, dt).expect("valid grid")
}

/// `u_t = div(A ∇u)` with a checkerboard `A` (contrast 1 is the heat equation),
/// zero Dirichlet data and a sine initial profile.
pub fn checkerboard_problem(grid: &SpaceTimeGrid, contrast: f64) -> ProblemSpec {
    let a = checkerboard(grid, contrast, 0.125);
    let lc = LinearCoefficients::isotropic(a, 1.0);
    let initial = AnalyticFn::Sine {
        amplitude: 1.0,
        wavenumbers: vec![1.0; grid.n()],
    }
    .initial_field(grid);
    let zero = AnalyticFn::Constant { value: 0.0 }.field(grid);
    ProblemSpec::linear(lc, initial, Boundary::Dirichlet(zero)).expect("valid problem")
}

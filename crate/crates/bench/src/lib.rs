//! Fixtures shared by the criterion benchmarks in `benches/`.

use std::sync::Arc;

use morrey_sde::chaos::SimplexGrid;
use morrey_sde::coeffs::{BallPlan, FieldRef, FnField};
use morrey_sde::quadrature::BallResolution;
use morrey_sde::{SpaceTimeGrid, WienerPath};

/// One-dimensional heat equation on `[-8, 8]` with `h = 0.02`, `dt = 10⁻³`
/// up to `t0 = 0.2`.
pub fn heat_1d() -> (FieldRef, SpaceTimeGrid) {
    let field: FieldRef = Arc::new(FnField::unit_diffusion(1, 1));
    let grid = SpaceTimeGrid::new(1, 8.0, 0.02, 1e-3, 0.2).expect("valid grid");
    (field, grid)
}

/// Three-dimensional heat equation on `[-2, 2]³` with `h = 0.1`.
pub fn heat_3d() -> (FieldRef, SpaceTimeGrid) {
    let field: FieldRef = Arc::new(FnField::unit_diffusion(3, 3));
    let grid = SpaceTimeGrid::new(3, 2.0, 0.1, 2e-3, 0.02).expect("valid grid");
    (field, grid)
}

/// Ball plan used for the Morrey benchmark (`|x|⁻¹` in three dimensions).
pub fn morrey_plan() -> BallPlan {
    BallPlan {
        resolution: BallResolution {
            n_radial: 16,
            n_angular: 6,
            radial_grading: 3.0,
        },
        center_box: 1.0,
        n_cap: 4,
        levels: 4,
        times: vec![0.0],
        refine_check: false,
    }
}

/// Order-2 constant kernel on a 20-node simplex and a 2-dimensional path.
pub fn ito_fixture() -> (SimplexGrid, Vec<f64>, WienerPath) {
    let grid = SimplexGrid::new(1.0, 20, 2).expect("valid simplex");
    let values = vec![1.0; grid.count(2)];
    let path = WienerPath::sample(2, 1.0, 1e-3, 7, 0).expect("valid path");
    (grid, values, path)
}

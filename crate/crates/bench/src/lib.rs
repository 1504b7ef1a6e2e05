//! Fixtures shared by the operator benchmarks.

use geotomo::{BoundaryData, Phantom, PolarGrid, RayTransform, RefractiveMedium, TensorField};

/// Mid-sized grid: large enough to be representative, small enough to iterate on one core.
pub const GRID: [usize; 3] = [16, 50, 50];

pub struct Fixture {
    pub grid: PolarGrid,
    pub medium: RefractiveMedium,
    pub field: TensorField,
    pub data: BoundaryData,
}

pub fn fixture(medium: &str, alpha: f64) -> Fixture {
    let grid = PolarGrid::new(GRID[0], GRID[1], GRID[2]).expect("grid");
    let medium = RefractiveMedium::by_name(medium, alpha).expect("medium");
    let field = Phantom::F1.field(&grid);
    let data = RayTransform::for_medium(&grid, 1, &medium, 200, 0.01)
        .and_then(|op| op.apply(&field))
        .expect("data");
    Fixture { grid, medium, field, data }
}

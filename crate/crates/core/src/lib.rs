//! Attenuated geodesic ray transforms of symmetric tensor fields on the unit disc.

pub mod adjoint;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod recon;
pub mod sparse;
pub mod tensor;
pub mod transport;

pub use adjoint::{Backprojector, Denominator, InnerProducts};
pub use error::{Error, Result};
pub use experiments::{ExperimentKind, ExperimentSpec, Phantom};
pub use forward::{Quadrature, RayTransform};
pub use geometry::{GeodesicPath, RefractiveMedium, TraceDirection};
pub use grid::{BoundaryData, PolarGrid, TensorField};
pub use recon::{landweber, OperatorOptions, Operators, ReconConfig};
pub use transport::{AdjointKind, PdeAdjoint};

use thiserror::Error;

/// Errors raised by the transforms, solvers and experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("P = {0} is odd; the innermost-ring stencil needs an even angular count")]
    OddP(usize),

    #[error("point ({x}, {y}) lies outside the unit disc")]
    OutsideDomain { x: f64, y: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid medium: {0}")]
    InvalidMedium(String),

    #[error("geodesic still inside the disc after {steps} steps (trapped ray)")]
    MaxSteps { steps: usize },

    #[error("final geodesic segment does not cross the boundary circle; reduce the step size")]
    NoIntersection,

    #[error("tangent vector must be nonzero")]
    ZeroTangent,

    #[error("direction is incoming at the boundary (<x, xi> = {0})")]
    IncomingDirection(f64),

    #[error("potential does not vanish on the boundary (|phi| = {value} at node p = {p})")]
    BoundaryNonzero { p: usize, value: f64 },

    #[error("least-squares solver stopped after {iterations} iterations with residual norm {residual:e}")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("data has zero norm")]
    ZeroData,

    #[error("reference field has zero norm")]
    ZeroField,

    #[error("Landweber diverged at iteration {iteration}: residual {residual:e} exceeds the limit {limit:e}")]
    DivergenceDetected {
        iteration: usize,
        residual: f64,
        limit: f64,
    },

    #[error("unknown phantom `{0}`")]
    UnknownPhantom(String),

    #[error("unknown medium `{0}`")]
    UnknownMedium(String),

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension must be 2 or 3, got {0}")]
    Dimension(usize),

    #[error("axis {axis} has {count} nodes, at least 4 are required")]
    TooFewNodes { axis: usize, count: usize },

    #[error("objects live on different grids")]
    GridMismatch,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("geometry violation: {0}")]
    Geometry(String),

    #[error("coefficient bound violated at {point:?}: {reason}")]
    Ellipticity { point: Vec<f64>, reason: String },

    #[error("negative density {value} at node {node}")]
    NegativeDensity { node: usize, value: f64 },

    #[error("measure kind not supported here: {0}")]
    UnsupportedMeasure(&'static str),

    #[error("solver did not converge: relative residual {residual:e} after {iterations} iterations")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("boundary datum incompatible with obstacle: g = {value} at pinned node {node}")]
    Incompatible { node: usize, value: f64 },

    #[error("ratio outside [0, 1] beyond tolerance: {0}")]
    BoundViolation(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("radius {0} outside the sampled range")]
    Extrapolation(f64),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Error {
        Error::InvalidInput(msg.into())
    }
}

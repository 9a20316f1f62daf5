use thiserror::Error;

/// Errors raised by grid construction, solvers, and experiment drivers.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("extent must be positive on every axis, got {0}")]
    InvalidExtent(f64),

    #[error("collar width {width} covers the domain (min extent {min_extent})")]
    CollarCoversDomain { width: f64, min_extent: f64 },

    #[error("need at least {min} interior points per axis, got {got}")]
    TooFewPoints { min: usize, got: usize },

    #[error("fields live on different grids ({left} vs {right} nodes)")]
    GridMismatch { left: usize, right: usize },

    #[error("symmetric eigensolver failed to converge")]
    EigenFailure,

    #[error("time step {dt} does not divide horizon {t_max}")]
    StepMismatch { dt: f64, t_max: f64 },

    #[error("source trajectory samples are not aligned with the configured time grid")]
    SourceMisaligned,

    #[error("Picard iteration did not converge in {iterations} iterations (last distance {last_distance:.3e})")]
    PicardDiverged { iterations: usize, last_distance: f64 },

    #[error("nonlinearity spec invalid: {0}")]
    InvalidNonlinearity(String),

    #[error("weight evaluated at singular time |t| >= T1 ({t} vs {t1})")]
    SingularTime { t: f64, t1: f64 },

    #[error("carleman weight under-resolved: cell-to-cell factor {factor:.3e} exceeds {limit:.1e}; need roughly {needed_points} points per axis")]
    UnderResolvedWeight { factor: f64, limit: f64, needed_points: usize },

    #[error("FBI quadrature under-resolved: need at least {needed} time samples for gamma = {gamma}")]
    UnderResolvedFbi { gamma: f64, needed: usize },

    #[error("no admissible (a, b) pair: require |psi0|_inf <= a < b < 2a - |psi0|_inf with |psi0|_inf = {psi_max}")]
    ParabolicParams { psi_max: f64 },

    #[error("exterior point {0:?} lies inside the closed domain")]
    InteriorWeightPoint(Vec<f64>),

    #[error("boundary selection contains nodes off the boundary: {0:?}")]
    BadBoundarySelection(Vec<usize>),

    #[error("precondition violated on collar nodes {nodes:?}: {what}")]
    CollarMismatch { what: String, nodes: Vec<usize> },

    #[error("experiment hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("inner nonlinear solve failed at epsilon = {epsilon}: {source}")]
    QuotientSolveFailed {
        epsilon: f64,
        #[source]
        source: Box<LabError>,
    },

    #[error("manifest invalid: {0}")]
    ManifestInvalid(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

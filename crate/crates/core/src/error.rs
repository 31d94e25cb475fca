use thiserror::Error;

/// Errors raised by the geometry, reflection, path and scheme operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("point is not on the boundary of patch {patch:?} (gauge {gauge:e})")]
    NotOnBoundary { patch: Option<usize>, gauge: f64 },

    #[error("gauge gradient of patch {patch:?} vanishes at {point:?}")]
    SingularPoint { patch: Option<usize>, point: Vec<f64> },

    #[error("patch index {index} out of range for {count} patches")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("invalid sampling configuration: {0}")]
    InvalidSampling(String),

    #[error("invalid reflection field: {0}")]
    InvalidField(String),

    #[error("reflection field {index} is the zero vector at {point:?}")]
    ZeroDirection { index: usize, point: Vec<f64> },

    #[error("not a nonsingular M-matrix: leading minor of order {order} is {value:e}")]
    NotMMatrix { order: usize, value: f64 },

    #[error("invalid polyhedron: {0}")]
    InvalidPolyhedron(String),

    #[error("constraint {0} is redundant in the polyhedron description")]
    RedundantConstraint(usize),

    #[error("{count} faces exceed the subset-enumeration limit of {limit}")]
    TooManyFaces { count: usize, limit: usize },

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("invalid path data: {0}")]
    InvalidPath(String),

    #[error("covariance matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("invalid scheme configuration: {0}")]
    InvalidConfig(String),

    #[error("reflection weights infeasible at {point:?} (active set {active:?}, best level {level:e})")]
    WeightsInfeasible {
        point: Vec<f64>,
        active: Vec<usize>,
        level: f64,
    },

    #[error("jump accumulation suspected after {events} events; inf of m over recent hits is {recent_min_reach:e}")]
    AccumulationSuspected { events: usize, recent_min_reach: f64 },

    #[error("jump from {point:?} does not land inside the domain")]
    JumpNotInterior { point: Vec<f64> },

    #[error("invalid oracle input: {0}")]
    Oracle(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    #[error("time grids differ")]
    GridMismatch,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

use crate::geometry::ModelKind;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("fields live on different geometries")]
    GeometryMismatch,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("wrong number of forms: expected {expected}, got {got}")]
    WrongArity { expected: usize, got: usize },
    #[error("reference form is not positive definite (margin {0:e})")]
    NonPositiveReference(f64),
    #[error("form is not positive definite (margin {0:e})")]
    NonPositiveForm(f64),
    #[error("subvariety `{0}` is not tracked by this geometry")]
    UntrackedSubvariety(String),
    #[error("theta is not positive (margin {0:e})")]
    NonPositiveTheta(f64),
    #[error("density must be positive and finite")]
    NonPositiveDensity,
    #[error("line search could not keep the form positive (iteration {iteration})")]
    LineSearchStall { iteration: usize },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("positivity lost during the solve")]
    PositivityLoss,
    #[error("ladder is not strictly monotone")]
    NonMonotoneLadder,
    #[error("{op} is not available on {kind:?}")]
    UnsupportedGeometry { kind: ModelKind, op: &'static str },
    #[error("time step failed at t = {t} with dt = {dt:e}")]
    StepFailure { t: f64, dt: f64 },
    #[error("bracket [{lo}, {hi}] does not contain a feasibility change")]
    BracketFailure { lo: f64, hi: f64 },
    #[error("no admissible sample found")]
    NoAdmissibleSample,
    #[error("negative positivity margin {0:e}")]
    NegativeMargin(f64),
    #[error("linear solver failed: {0}")]
    LinearSolver(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

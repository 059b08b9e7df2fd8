use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("rotation axis is not a unit vector (|w| = {norm})")]
    NonUnitAxis { norm: f64 },
    #[error("matrix is not symmetric positive definite (min eigenvalue {min_eigenvalue})")]
    NotSpd { min_eigenvalue: f64 },
    #[error("matrix is not symmetric (asymmetry {asymmetry})")]
    NotSymmetric { asymmetry: f64 },
    #[error("determinant {det} is not positive")]
    NonPositiveDet { det: f64 },
    #[error("growth function argument {t} is negative")]
    NegativeArgument { t: f64 },
    #[error("growth exponent p = {p} must satisfy 1 < p <= 2")]
    BadExponent { p: f64 },
    #[error("invalid material: {0}")]
    Material(String),
    #[error("finite-difference Hessian did not converge (Richardson residual {residual})")]
    HessianNotConverged { residual: f64 },
    #[error("coercivity violated: W^I/g_p = {ratio} at sample {sample}")]
    CoercivityViolation { ratio: f64, sample: usize },
    #[error("invalid load: {0}")]
    Load(String),
    #[error("equilibrium violated: |resultant| = {resultant}, |torque| = {torque}")]
    Equilibrium { resultant: f64, torque: f64 },
    #[error("load compatibility violated: margin {margin}")]
    Compatibility { margin: f64 },
    #[error("quadrature produced a non-finite value at {location}")]
    Quadrature { location: String },
    #[error("input field is rigid (strain norm {norm})")]
    RigidInput { norm: f64 },
    #[error("invalid domain: {0}")]
    Domain(String),
    #[error("invalid mesh: {0}")]
    Mesh(String),
    #[error("energy mode mismatch: {0}")]
    ModeMismatch(String),
    #[error("trajectory from {start:?} left the flow region at t = {time}")]
    FlowExit { start: [f64; 3], time: f64 },
    #[error("flow setup: {0}")]
    Flow(String),
    #[error("mollifier radius {epsilon} is below two grid spacings ({spacing})")]
    MollifierTooNarrow { epsilon: f64, spacing: f64 },
    #[error("augmented Lagrangian stagnated at divergence residual {residual} after {iterations} iterations")]
    UzawaStagnation { residual: f64, iterations: usize },
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
    #[error("objective is unbounded below along rotation parameters (curvature {curvature})")]
    Unbounded { curvature: f64 },
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("hole touches the cell boundary: {0}")]
    HoleTouchesBoundary(String),
    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("slip coefficient must be positive (min {0})")]
    NonPositiveSlip(f64),
    #[error("assembly failed: {0}")]
    AssemblyFailure(String),
    #[error("solve failed: {0}")]
    SolveFailure(String),
    #[error("no steady state: the energy form is degenerate without a hole")]
    NoSteadyState,
    #[error("operation requires a hole in the cell")]
    NoHole,
    #[error("time grids do not match: {0}")]
    GridMismatch(String),
    #[error("kernel shows no decay (rate {0})")]
    NoDecay(f64),
    #[error("invalid noise specification: {0}")]
    InvalidSpec(String),
    #[error("kernel horizon {horizon} exceeded at t = {t}")]
    KernelHorizonExceeded { t: f64, horizon: f64 },
    #[error("step {0} has not been computed")]
    NotComputed(usize),
    #[error("elliptic operator is singular: {0}")]
    SingularOperator(String),
    #[error("initial data is not separable: {0}")]
    NonSeparableInitialData(String),
    #[error("CFL violation: convective number {0:.3} exceeds 1")]
    CflViolation(f64),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("kernel provenance mismatch: {0}")]
    ProvenanceMismatch(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("right-hand side has nonzero mean {mean:e} (relative tolerance {tol:e})")]
    NonZeroMean { mean: f64, tol: f64 },
    #[error("unknown coefficient family `{0}`")]
    UnknownFamily(String),
    #[error("invalid parameters for `{family}`: {reason}")]
    InvalidParameters { family: String, reason: String },
    #[error("ellipticity violated: {0}")]
    EllipticityViolated(String),
    #[error("lambda must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("unsupported coefficient structure: {0}")]
    UnsupportedCoefficient(String),
    #[error("no convergence after {max_periods} periods (last increment {last_increment:e})")]
    NoConvergence { max_periods: usize, last_increment: f64 },
    #[error("linear solve failed after {iterations} iterations (relative residual {residual:e})")]
    LinearSolveFailed { iterations: usize, residual: f64 },
    #[error("flux has nonzero mean {0:e}")]
    MeanNotZero(f64),
    #[error("identity check `{identity}` failed: residual {residual:e} > {tolerance:e}")]
    IdentityCheckFailed { identity: String, residual: f64, tolerance: f64 },
    #[error("ellipticity certificate {cert} below mu = {mu}")]
    EllipticityCertFailed { cert: f64, mu: f64 },
    #[error("coefficient `{0}` carries no seminorm bounds; rate experiments need a smooth field")]
    RoughCoefficientRejected(String),
    #[error("mollifier under-resolved: {0}")]
    UnderResolvedMollifier(String),
    #[error("cutoff width too large: {0}")]
    DeltaTooLarge(String),
    #[error("resolution policy violated: {0}")]
    ResolutionPolicyViolated(String),
    #[error("fields live on different meshes: {0}")]
    MeshMismatch(String),
    #[error("k must be positive, got {0}")]
    NonPositiveK(f64),
    #[error("need at least 3 samples above the floor, got {0}")]
    TooFewSamples(usize),
    #[error("all errors are below the floor {0:e}")]
    AllBelowFloor(f64),
    #[error("cylinder leaves the domain: {0}")]
    CylinderOutOfDomain(String),
    #[error("least-squares system is singular at r = {0}")]
    SingularLeastSquares(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse grouping used by front-ends to map failures onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input: malformed parameters, violated preconditions.
    Validation,
    /// The numerics cannot give an unambiguous answer (spectral boundaries,
    /// vanishing projectors, incompatible fiducials).
    Ambiguity,
    /// The requested Hilbert space exceeds the configured dimension cap.
    ResourceCap,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Fock space: {0}")]
    InvalidSpace(String),

    #[error("Hilbert-space dimension {dim} exceeds the resource cap {cap}")]
    ResourceCap { dim: usize, cap: usize },

    #[error("mode index {mode} out of range for a {modes}-mode space")]
    ModeOutOfRange { mode: usize, modes: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not hermitian (relative defect {defect:.3e})")]
    NotHermitian { defect: f64 },

    #[error("matrix is not a projector (idempotence defect {defect:.3e})")]
    NotProjector { defect: f64 },

    #[error("coherent label has |z|^2 = {norm_sq:.6} beyond the truncation bound {bound:.6}")]
    TruncationBound { norm_sq: f64, bound: f64 },

    #[error("coherent state leaks past the cutoff: boundary weight {weight:.3e} > tolerance {tolerance:.3e}")]
    TruncationLeak { weight: f64, tolerance: f64 },

    #[error("label has {found} modes, expected {expected}")]
    LabelArity { expected: usize, found: usize },

    #[error("fiducial vector must have unit norm (found {0:.15})")]
    FiducialNorm(f64),

    #[error("sum of squared constraints is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPositive(f64),

    #[error("eigenvalue {eigenvalue} lies within {tolerance:e} of delta^2 = {delta_squared}; choose a different delta^2")]
    DeltaBoundary {
        eigenvalue: f64,
        delta_squared: f64,
        tolerance: f64,
    },

    #[error("zero physical space: {0}")]
    ZeroPhysicalSpace(&'static str),

    #[error("kernel vanishes at delta = {delta}; rescale required")]
    KernelVanishes { delta: f64 },

    #[error("Gram matrix is not positive semidefinite (min eigenvalue {min:.3e}, max {max:.3e})")]
    GramNotPositive { min: f64, max: f64 },

    #[error("invalid delta ladder: {0}")]
    InvalidLadder(String),

    #[error("insufficient evidence: N_max = {0} < 16")]
    InsufficientEvidence(usize),

    #[error("invalid label sequence: {0}")]
    InvalidSequence(String),

    #[error("sectors coincide: overlap modulus is 1, no decay")]
    SameSector,

    #[error("sequences do not share a sector: {0}")]
    SectorMismatch(String),

    #[error("fiducial incompatible with the projector: S = <eta|E|eta> = {0:.3e}")]
    IncompatibleFiducial(f64),

    #[error("commuting branch requested but ||[E,H]|| = {0:.3e}")]
    NonCommuting(f64),

    #[error("no eigenvector of the Hamiltonian overlaps the physical subspace")]
    NoCompatibleEigenvector,

    #[error("fixed-point condition violated: {condition} (deviation {deviation:.3e})")]
    FixedPointViolated {
        condition: &'static str,
        deviation: f64,
    },

    #[error("operator expression: {0}")]
    Expression(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::ResourceCap { .. } => ErrorClass::ResourceCap,
            Error::NotPositive(_)
            | Error::DeltaBoundary { .. }
            | Error::ZeroPhysicalSpace(_)
            | Error::KernelVanishes { .. }
            | Error::GramNotPositive { .. }
            | Error::SameSector
            | Error::IncompatibleFiducial(_)
            | Error::NonCommuting(_)
            | Error::NoCompatibleEigenvector
            | Error::FixedPointViolated { .. } => ErrorClass::Ambiguity,
            _ => ErrorClass::Validation,
        }
    }
}

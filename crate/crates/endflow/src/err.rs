use thiserror::Error;

/// Coarse failure class, used by callers to pick an exit status.
///
/// Precondition failures mean the inputs never satisfied the contract of the
/// operation (malformed files, mismatched domains, infeasible targets).
/// Numeric failures mean the inputs were admissible but the computation could
/// not meet its accuracy or validity requirements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Precondition,
    Numeric,
}

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain specification invalid: {0}")]
    BadDomain(String),

    #[error("objects live on different domains ({0})")]
    DomainMismatch(String),

    #[error("region invalid: {0}")]
    BadRegion(String),

    #[error("exhaustion does not fit: {0}")]
    ExhaustionTooDeep(String),

    #[error("density field invalid: {0}")]
    BadField(String),

    #[error("map invalid: {0}")]
    BadMap(String),

    #[error("isotopy path invalid: {0}")]
    BadPath(String),

    #[error("symmetric difference has infinite mass ({0})")]
    InfiniteSymmetricDifference(String),

    #[error("total masses differ: {0}")]
    MassMismatch(String),

    #[error("collar mismatch: {0}")]
    CollarMismatch(String),

    #[error("finite end sets differ: {0}")]
    EndSetMismatch(String),

    #[error("end charge inadmissible: {0}")]
    ChargeInvalid(String),

    #[error("transfer targets infeasible: {0}")]
    InfeasibleTargets(String),

    #[error("requested transfer amount out of range: {0}")]
    OutOfRange(String),

    #[error("allocation functional fails axiom {0}")]
    AxiomViolation(String),

    #[error("file format invalid: {0}")]
    Format(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    /// Failure class of this error; drives the process exit status.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Numeric(_) => ErrorClass::Numeric,
            _ => ErrorClass::Precondition,
        }
    }
}

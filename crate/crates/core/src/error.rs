use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("operator is not a derivation (Leibniz residual {residual:.3e})")]
    NotADerivation { residual: f64 },

    #[error("sign convention could not be verified: {0}")]
    ConventionError(String),

    #[error("numerical overflow: {0}")]
    NumericalOverflow(String),

    #[error("outside the logarithm domain: {0}")]
    LogDomainError(String),

    #[error("start subspace is not a subalgebra (closure residual {residual:.3e})")]
    NotASubalgebra { residual: f64 },

    #[error("unknown group `{0}`")]
    UnknownGroup(String),

    #[error("element is not in the group (membership residual {residual:.3e})")]
    Membership { residual: f64 },

    #[error("flow strategy unavailable: {0}")]
    StrategyError(String),

    #[error("derivation {index} is not inner (witness residual {residual:.3e})")]
    NotInner { index: usize, residual: f64 },

    #[error("only {got} endpoints landed in the log domain, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("certificate `{case}` failed: residual {residual:.3e} >= tolerance {tolerance:.3e}")]
    CertificateFailure {
        case: String,
        residual: f64,
        tolerance: f64,
    },

    #[error("wrong group class: {0}")]
    WrongClass(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

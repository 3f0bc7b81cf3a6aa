use thiserror::Error;

/// Errors produced anywhere in the simulator toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("indistinguishable distributions")]
    IndistinguishableDistributions,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("extrapolation outside fitted range: {0}")]
    Extrapolation(String),

    #[error("insufficient sample diversity: {0}")]
    InsufficientSampleDiversity(String),

    #[error("zero variance")]
    ZeroVariance,

    #[error("model not yet trained")]
    ModelNotTrained,

    #[error("no neighbor available")]
    NoNeighbor,

    #[error("RBER beyond code family")]
    RberBeyondCodeFamily,

    #[error("unrecoverable: {0} failed members in group")]
    Unrecoverable(usize),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("address out of range: {0}")]
    Address(String),

    #[error("program order violation: {0}")]
    ProgramOrder(String),

    #[error("page not programmed: {0}")]
    NotProgrammed(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("extend PEC grid: {0}")]
    ExtendPecGrid(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

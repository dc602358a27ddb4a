use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value in {0}")]
    NumericInput(&'static str),
    #[error("CG breakdown: <p, W p> = {0:e} is not positive")]
    NumericalBreakdown(f64),
    #[error("division by a degenerate scalar: {0}")]
    DivisionDegenerate(&'static str),
    #[error("estimate undefined: {0}")]
    UndefinedEstimate(&'static str),
    #[error("Onsager correction degenerate: denoiser divergence {0} too close to 1")]
    OnsagerDegenerate(f64),
    #[error("block A degenerate: correction scalar is zero")]
    BlockADegenerate,
    #[error("direct solve failed: {0}")]
    Solver(String),
    #[error("oracle data unavailable: {0}")]
    OracleUnavailable(&'static str),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

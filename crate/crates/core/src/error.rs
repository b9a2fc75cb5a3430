use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid knots: {0}")]
    InvalidKnots(String),
    #[error("too few interior knots: need at least 2, got {0}")]
    TooFewKnots(usize),
    #[error("value {y} outside the spline support [{a}, {b}]")]
    OutOfRange { y: f64, a: f64, b: f64 },
    #[error("proposed knot {0} coincides with an existing knot")]
    DegenerateInsertion(f64),
    #[error("cannot delete a knot: configuration already has the minimum of 2 interior knots")]
    MinimumKnots,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("non-finite emission density at time index {0}")]
    NonFiniteEmission(usize),
    #[error("forward recursion underflowed at time index {0}")]
    Underflow(usize),
    #[error("sampler failure at sweep {sweep}: {message}")]
    Sampler { sweep: usize, message: String },
    #[error("chain for candidate N={candidate} failed: {source}")]
    Candidate {
        candidate: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("draw count mismatch: {0}")]
    DrawMismatch(String),
    #[error("empty trace")]
    EmptyTrace,
    #[error("no time points were decoded into the conditioning state")]
    EmptyConditioning,
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Zero-sized or mismatched grid / tensor shapes.
    Dimension(String),
    /// A scalar parameter outside its admissible range.
    Parameter(String),
    /// Timestep or element index outside `1..=len`.
    Index { index: usize, len: usize },
    /// A denominator fell below the numeric guard.
    NumericDegenerate(String),
    /// An input collection was empty or too small.
    Empty(String),
    /// Training produced a non-finite loss.
    NonFinite { iteration: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension error: {msg}"),
            Error::Parameter(msg) => write!(f, "parameter error: {msg}"),
            Error::Index { index, len } => {
                write!(f, "index error: {index} is outside 1..={len}")
            }
            Error::NumericDegenerate(msg) => write!(f, "numerically degenerate: {msg}"),
            Error::Empty(msg) => write!(f, "empty input: {msg}"),
            Error::NonFinite { iteration } => {
                write!(f, "non-finite loss at training iteration {iteration}")
            }
        }
    }
}

impl core::error::Error for Error {}

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::Error::Dimension(alloc::format!($($arg)*)) };
}
macro_rules! param_err {
    ($($arg:tt)*) => { $crate::Error::Parameter(alloc::format!($($arg)*)) };
}
pub(crate) use dim_err;
pub(crate) use param_err;

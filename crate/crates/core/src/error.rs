use alloc::string::String;
use core::fmt;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Shapes or extents that do not line up.
    Dimension(String),
    /// Input that is well-shaped but mathematically degenerate (zero norm, too short, ...).
    Degenerate(String),
    /// API misuse: empty inputs, non-scalar backward roots, out-of-range arguments.
    Usage(String),
    /// A NaN or infinity surfaced in a value or gradient.
    NonFinite(String),
    /// Synthetic data generation could not satisfy its constraints.
    Generation(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Degenerate(m) => write!(f, "degenerate input: {m}"),
            Error::Usage(m) => write!(f, "usage error: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::Generation(m) => write!(f, "generation error: {m}"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(alloc::format!($($arg)*)) };
}
macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::error::Error::Usage(alloc::format!($($arg)*)) };
}
macro_rules! degenerate_err {
    ($($arg:tt)*) => { $crate::error::Error::Degenerate(alloc::format!($($arg)*)) };
}
pub(crate) use {degenerate_err, dim_err, usage_err};

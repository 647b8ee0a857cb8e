//! Error type shared by every module of the crate.

use alloc::string::String;
use core::fmt;

/// Convenience alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

/// Everything that can go wrong in this crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not line up.
    DimensionMismatch {
        /// What the operation expected.
        expected: usize,
        /// What it received.
        got: usize,
    },
    /// An input violated a precondition (non-finite value, unsorted times,
    /// non-positive parameter, ...).
    InvalidInput(String),
    /// The requested kernel variant cannot be used for this operation.
    UnsupportedKernel(String),
    /// The requested basis family cannot be used for this operation.
    UnsupportedBasis(String),
    /// A factorization or solve failed even after jitter escalation.
    Numerical(String),
    /// A cross-time covariance was requested for a time with no stored
    /// feature snapshot.
    MissingCheckpoint {
        /// The requested snapshot time.
        time: f64,
    },
    /// Not enough candidates to select the requested number of points.
    InsufficientCandidates {
        /// How many points were requested.
        needed: usize,
        /// How many candidates were available.
        available: usize,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::UnsupportedKernel(msg) => write!(f, "unsupported kernel: {msg}"),
            Error::UnsupportedBasis(msg) => write!(f, "unsupported basis: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            Error::MissingCheckpoint { time } => {
                write!(f, "no feature snapshot stored at t = {time}")
            }
            Error::InsufficientCandidates { needed, available } => {
                write!(
                    f,
                    "need {needed} candidates but only {available} are available"
                )
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

//! Crate-wide error type.

use core::fmt;

use crate::scheme::{CoordUnit, SchemeError};

/// Convenience alias used throughout the crate.
pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Everything that can go wrong in this crate.
#[derive(Debug, Clone, PartialEq)]
#[non_exhaustive]
pub enum Error {
    /// A landmark scheme failed validation.
    Scheme(SchemeError),
    /// Two point sets (or a point set and a scheme) disagree on length.
    PointCount { expected: usize, got: usize },
    /// Two point sets carry different coordinate units.
    UnitMismatch { expected: CoordUnit, got: CoordUnit },
    /// A coordinate or input value is NaN or infinite.
    NonFinite { context: &'static str },
    /// A configuration value is outside its documented domain.
    InvalidConfig { reason: &'static str },
    /// An input value violates a documented precondition.
    InvalidInput { reason: &'static str },
    /// Heatmap dimensions or channel counts do not line up.
    ShapeMismatch { reason: &'static str },
    /// Bias rate is undefined because the normal error is zero.
    UndefinedBiasRate,
    /// Anisotropy estimation needs at least three scatter pairs per landmark.
    InsufficientScatter { landmark: usize, n_pairs: usize },
    /// An optimizer left the trust region (loss above the divergence bound
    /// or no longer finite).
    Diverged { iteration: usize, loss: f64 },
    /// A masked heatmap channel holds no probability mass, so soft-argmax
    /// cannot move its landmark.
    NoMassInMask { channel: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Scheme(e) => write!(f, "invalid scheme: {e}"),
            Error::PointCount { expected, got } => {
                write!(f, "point count mismatch: expected {expected}, got {got}")
            }
            Error::UnitMismatch { expected, got } => {
                write!(f, "coordinate unit mismatch: expected {expected}, got {got}")
            }
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::InvalidConfig { reason } => write!(f, "invalid configuration: {reason}"),
            Error::InvalidInput { reason } => write!(f, "invalid input: {reason}"),
            Error::ShapeMismatch { reason } => write!(f, "shape mismatch: {reason}"),
            Error::UndefinedBiasRate => {
                write!(f, "bias rate undefined: normal error is zero")
            }
            Error::InsufficientScatter { landmark, n_pairs } => write!(
                f,
                "landmark {landmark} has {n_pairs} scatter pairs; at least 3 are required"
            ),
            Error::Diverged { iteration, loss } => {
                write!(f, "optimization diverged at iteration {iteration} (loss {loss})")
            }
            Error::NoMassInMask { channel } => {
                write!(f, "heatmap channel {channel} has no mass inside its mask")
            }
        }
    }
}

impl core::error::Error for Error {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        match self {
            Error::Scheme(e) => Some(e),
            _ => None,
        }
    }
}

impl From<SchemeError> for Error {
    fn from(e: SchemeError) -> Self {
        Error::Scheme(e)
    }
}

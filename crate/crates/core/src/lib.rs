//! Geometry-aware landmark toolkit.
//!
//! Facial-landmark style point sets live on curves: an eyelid, a lip margin,
//! the jaw line. Along such a curve the position of a point is ambiguous
//! (annotators slide along the edge), while across the curve it is sharp.
//! This crate makes that anisotropy a first-class object:
//!
//! 1. [`scheme`] describes which landmarks form which polylines and how a
//!    face is normalized (inter-ocular / inter-pupil distance).
//! 2. [`direction`] derives a per-landmark orthonormal frame — normal and
//!    tangent — from the ground-truth neighbors on the curve, and splits
//!    prediction errors into normal/tangent components.
//! 3. [`loss`] implements direction-weighted regression losses (plus the
//!    adaptive wing loss for heatmaps) with analytic gradients.
//! 4. [`heatmap`] renders point and edge target maps, combines them, and
//!    decodes coordinates with a differentiable masked soft-argmax.
//! 5. [`metrics`] computes normalized mean error, failure rate, AUC of the
//!    cumulative error distribution, and directional bias statistics.
//! 6. [`fitlab`] is a small synthetic-data laboratory: generate noisy
//!    annotations with controlled normal/tangent spread, fit landmarks
//!    through the coordinate or heatmap path, and estimate the anisotropy
//!    ratio back from error scatter.
//! 7. [`gradcheck`] verifies every analytic gradient in the crate against
//!    central finite differences.
//!
//! The crate is `no_std`-compatible (requires `alloc`): disable the default
//! `std` feature and enable `libm` instead.
#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("enable at least one of the `std` or `libm` features");

pub mod direction;
pub mod error;
mod fmath;
pub mod fitlab;
pub mod gradcheck;
pub mod heatmap;
pub mod loss;
pub mod metrics;
pub mod scheme;

pub use error::{Error, Result};
pub use scheme::{CoordUnit, LandmarkScheme, PointSet};

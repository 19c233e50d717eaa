//! Transfer function optimization for comparative direct volume rendering.
//!
//! Given a reference volume rendered with a reference transfer function, the
//! crate finds a transfer function for a second volume so that both look as
//! alike as possible. Two routes are provided:
//!
//! * voxel space: the pre-shaded voxel colors depend linearly on the table
//!   entries, so the problem is a sparse, box-constrained least squares
//!   system ([`assembly`], [`solvers`]);
//! * image space: a differentiable emission-absorption ray marcher produces
//!   gradients of an image loss with respect to the table ([`diffdvr`]).
//!
//! [`compare`] computes the residual field between two pre-shaded volumes and
//! the usual image metrics, and [`renderer`] draws volumes and residuals.

pub mod assembly;
pub mod compare;
pub mod diffdvr;
mod error;
pub mod fieldgen;
pub mod floatser;
mod par;
pub mod renderer;
pub mod solvers;
pub mod volcore;

pub use error::{Error, Result};

//! Shift- and stretch-invariant non-negative matrix factorization for
//! multichannel time series, operating in the frequency domain.
//!
//! Each channel is modeled as a non-negative mixture of shared temporal
//! profiles that may be circularly shifted by a per-channel, per-component
//! delay and stretched by a rational dilation factor. Delays become phase
//! ramps and stretches become spectrum resampling, so the whole model lives
//! on one-sided real DFTs and is fit by alternating closed-form amplitude
//! and grid-search alignment updates with first-order profile refinement.

pub mod data;
pub mod error;
pub mod estimation;
pub mod eval;
pub mod init;
pub mod model;
pub mod spectral;
pub mod stretch;

pub use error::{Error, Result};

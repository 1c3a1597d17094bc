//! Two-timescale decentralized receive beamforming and six-dimensional
//! movable-antenna (6DMA) optimization for cell-free MIMO uplinks.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: rotations, angle transforms, array responses and the
//!   directional radiation pattern.
//! - [`channel`]: scenario construction, path statistics and per-realization
//!   channel assembly.
//! - [`beamform`]: per-AP local receivers, the decentralized LMMSE
//!   beamformer, the long-timescale parameter solve and the centralized MMSE
//!   baseline.
//! - [`objective`]: rates, the sample objective, the UatF bound and gradients.
//! - [`cssca`]: the stochastic successive convex approximation loop that
//!   jointly moves antennas, rotates arrays and adapts the long-timescale
//!   parameter.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beamform;
pub mod channel;
pub mod cssca;
pub mod error;
pub mod geometry;
pub mod objective;
pub mod rng;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = nalgebra::Complex<f64>;
/// Dynamically sized complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dynamically sized complex column vector.
pub type CVector = nalgebra::DVector<C64>;

//! Open quantum Brownian motion of a trapped particle carrying a qubit.
//!
//! The crate computes the reduced rate coefficients from bath parameters,
//! integrates the four-field Wigner PDE system, evolves the truncated moment
//! hierarchy and provides the full (x, p) phase-space solver used to check the
//! adiabatic elimination of momentum.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the common double-precision case.

// `!(x > 0)` is the NaN-rejecting guard used throughout; stencil loops index
// several arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod grid;
pub mod moments;
pub mod observables;
pub mod oqbm;
pub mod params;
pub mod phase_space;
mod scalar;
pub mod special;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type CoefficientSet64 = params::CoefficientSet<f64>;
pub type PhysicalParams64 = params::PhysicalParams<f64>;
pub type SpatialGrid64 = grid::SpatialGrid<f64>;
pub type PhaseGrid64 = grid::PhaseGrid<f64>;
pub type WignerField64 = oqbm::WignerField<f64>;
pub type TimeSeries64 = observables::TimeSeries<f64>;
pub type MomentSystem64 = moments::MomentSystem<f64>;
pub type PhaseSpaceField64 = phase_space::PhaseSpaceField<f64>;

//! Bohmian dynamics of scalar-field modes on de Sitter space.
//!
//! Each Fourier mode of a free massless field is mapped, by a time-dependent
//! rescaling and change of clock, onto a two-dimensional harmonic oscillator
//! that stays regular through the end of the conformal patch. The crate
//! propagates mode wave functions exactly in that picture, integrates the
//! guided configurations, and measures how their late-time values freeze.

// `!(a < b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bohm;
pub mod cli;
pub mod coords;
pub mod dd;
pub mod error;
pub mod freeze;
pub mod hermite;
pub mod multimode;
pub mod ode;
pub mod schrodinger;
pub mod stats;
pub mod transform;

pub use error::{Error, Result};

//! Estimation of surface heat transfer coefficients of a two-layer sample in
//! a climatic chamber.
//!
//! A lumped 1D model ([`solver1d`]) drives a random-walk Metropolis sampler
//! ([`inference`]); a 2D DuFort-Frankel model ([`solver2d`]) provides the
//! reference used by the approximation error model ([`aem`]) and the
//! reliability diagnostics.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aem;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod measurement;
pub mod model;
pub mod ode;
pub mod sensitivity;
pub mod solver1d;
pub mod solver2d;

pub use error::{Error, Result};

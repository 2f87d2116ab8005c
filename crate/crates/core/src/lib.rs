//! Online identification of a photovoltaic array's IV curve and its
//! maximum-power-point voltage.
//!
//! The pipeline is: [`plant`] simulates the array behind a boost converter;
//! [`regressor`] filters the measured signals into a linear regression in the
//! reparameterised coefficients θ; [`drem`] extends and mixes that regression
//! into five scalar ones and estimates θ; [`recovery`] maps θ back to the
//! lumped IV parameters; [`mpp`] drives an observer to the maximum power
//! voltage. [`harness`] wires everything into reproducible scenarios.

// NaN must fail the guards, so negated comparisons are intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod drem;
pub mod error;
pub mod harness;
pub mod integrator;
pub mod linalg;
pub mod mpp;
pub mod plant;
pub mod pv_model;
pub mod recovery;
pub mod regressor;
mod roots;

pub use error::{Error, Result};
pub use pv_model::IVParams;

//! Similarity solutions of `f''' + alpha f f'' - beta f'^2 = 0` on the half
//! line: integration, shooting, classification and the phase-plane picture.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod cli;
pub mod error;
pub mod figures;
pub mod integrator;
pub mod model;
pub mod ode;
pub mod phaseplane;
pub mod shooting;
pub mod verify;

pub use error::{Error, Result};

//! Knot-point parameterized model predictive control.
//!
//! Plant models and linearization live in [`dynamics`], the knot
//! parameterization in [`param`], the convex solver in [`qp`] and the MPC
//! problem builders in [`condense`]. [`empc`] provides the evolutionary
//! controller and [`closedloop`] runs controllers against nonlinear plants.

pub mod closedloop;
pub mod condense;
pub mod dynamics;
pub mod empc;
pub mod error;
pub mod param;
pub mod qp;

pub use error::{Error, Result};

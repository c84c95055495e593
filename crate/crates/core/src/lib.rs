//! Numerical laboratory for the Yang-Mills gradient flow on periodic lattices:
//! Lie-algebra arithmetic, lattice operators, an RK4 flow integrator, the
//! parabolic density and singular-set diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod density;
pub mod error;
mod fft;
pub mod flow;
pub mod geometry;
pub mod lattice;
pub mod lie;

pub use error::{Error, Result};

//! Periodic lattice discretization: grids, fields, and the differential
//! operators of the gauge theory.

mod fields;
mod grid;
mod ops;
pub mod snapshot;

pub use fields::{
    pair_count, pair_index, CurvatureField, GaugePotential, LieField, ScalarField, FIELD_SKEW_TOL,
};
pub use grid::Grid;
pub use ops::{
    conjugate_field, covariant_derivative, covariant_gradient, curvature, divergence_star,
    energy_density, field_inner, gauge_transform_constant, ym_energy,
};

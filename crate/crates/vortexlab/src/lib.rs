//! Numerical laboratory for ρ-vortex equations on a flat Kähler 4-torus.
//!
//! The unknowns are a connection on compact lattice links and a section on
//! sites. The crate discretizes the vortex equations, minimizes the
//! Yang–Mills–Higgs action, and checks the identities and a-priori bounds
//! that hold for its minimizers.

pub mod algebra;
pub mod compactness;
pub mod analysis;
pub mod energy;
pub mod fields;
pub mod gaugefix;
pub mod lattice;
pub mod linalg;
mod par;

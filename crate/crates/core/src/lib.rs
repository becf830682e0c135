//! Fractal percolation in `[0,1]^d`, the boundary-death substitution map
//! that lowers its dimension by a quasisymmetry, the global extension of
//! that map to the whole cube, and the numerical analysis around it.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod globalmap;
pub mod lattice;
pub mod percolation;
pub mod report;
pub mod substitution;
pub mod verify;

pub use error::{Error, Result};
pub use lattice::{Label, Params, Word};

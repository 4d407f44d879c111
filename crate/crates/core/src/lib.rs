// Negated float comparisons reject NaN on purpose; index loops mirror the
// formulas they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod chain;
pub mod error;
pub mod functionals;
pub mod harness;
pub mod kinetic;
pub mod lattice;
pub mod limits;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};

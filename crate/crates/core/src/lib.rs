//! Finite element laboratory for relaxed Dirichlet problems `Lu + μu = ν`.
//!
//! The crate discretises divergence-form elliptic operators with
//! multilinear elements on uniform grids and builds on that to compute
//! capacities, approximate Green functions, Kato norms, Wiener moduli and
//! local energy decay profiles.

// `!(x > 0.0)` rejects NaN on purpose; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod capacity;
pub mod elliptic;
pub mod energy;
pub mod error;
pub mod green;
pub mod grid;
pub mod measures;
pub mod relaxed;
pub mod wiener;

pub use error::{Error, Result};

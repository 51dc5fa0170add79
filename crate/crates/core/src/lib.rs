//! Numerical core for Hamilton–Jacobi theory of systems with linear velocity
//! constraints `Ω(x) ẋ = 0`.
//!
//! The crate is `no_std` with `alloc`; the `std` feature only matters for the
//! optional `parallel` grid solver.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
// Index loops mirror the component formulas; `!(a <= b)` makes NaN fail.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod audit;
pub mod dynamics;
pub mod geometry;
pub mod grid;
pub mod hj;
pub mod linalg;
pub mod ode;
pub mod quadrature;
pub mod scenario;

pub use error::{Error, Result};

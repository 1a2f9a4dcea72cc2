//! Monotonicity-based inclusion detection for two-dimensional linear
//! elasticity.
//!
//! The crate builds structured P1 finite-element discretizations of the
//! mixed Dirichlet/Neumann elasticity problem on the unit square, supports
//! finite, cavity (perfectly elastic), and rigid (infinitely stiff)
//! inclusions, assembles discrete Neumann-to-Dirichlet operators in an
//! orthonormal boundary-load basis, and runs the Loewner-order shape tests
//! that localize inclusions: the outer test against extreme test operators,
//! the inner tests with finite or linearized perturbations, and the
//! linearized outer test for non-extreme inclusions. Scripted studies cover
//! the truncation-convergence rate of extreme operators and localized
//! boundary loads.

pub mod error;
pub mod experiments;
pub mod fem;
pub mod materials;
pub mod mesh;
pub mod monotonicity;
pub mod ndmap;
pub mod reconstruct;
pub mod solver;

pub use error::{Error, Result};

//! 2D nonlocal finite-element toolkit for volume-constrained Dirichlet
//! problems with finite-horizon kernels.
//!
//! The crate assembles, solves, and verifies piecewise-linear Galerkin
//! discretizations of the nonlocal diffusion operator on the unit square,
//! with exact and approximate interaction balls, composite inner/outer
//! quadrature, and a study harness that reproduces convergence and
//! geometric-error experiments.

pub mod assembly;
pub mod error;
pub mod geometry;
pub mod mesh;
pub mod harness;
pub mod point;
pub mod quadrature;
pub mod solver;

pub use error::{Error, Result};
pub use point::{Point, Triangle};

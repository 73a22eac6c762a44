//! Stabilizer-free weak Galerkin solver for the Poisson problem on
//! polytopal meshes.

pub mod basis;
pub mod error;
pub mod mesh;
pub mod quadrature;

pub use error::{Error, Result};
pub mod lambda;
pub mod poly;
pub mod weak_gradient;

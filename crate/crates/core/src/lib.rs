//! Traction-free linear elasticity with incompatible strains.
//!
//! Given a cell-wise elasticity tensor `C` on a box `Ω` and a closed
//! dislocation loop measure `μ`, [`duality::solve_incompatible`] computes
//! `β = β^μ + Du` with `curl β = μ_δ`, `−div(Cβ) = 0` and `Cβ·n = 0`, unique up
//! to a constant skew matrix. The [`homogenization`] module computes
//! effective tensors of periodic microstructures and runs G-convergence
//! studies.

pub mod cli_io;
pub mod dislocation;
pub mod duality;
pub mod error;
pub mod fem;
pub mod field;
pub mod homogenization;
pub mod material;
pub mod mesh;
pub mod spectral;
pub mod tensor;

pub use error::{Error, ErrorClass, Result};
pub use field::{Exponent, TensorField, VectorField};
pub use mesh::HexMesh;
pub use tensor::{Mat3, Tensor4};

//! P1 finite-element solver for the 2D parabolic-elliptic Keller-Segel
//! chemotaxis system, built around a mass-lumped, positivity-preserving and
//! energy-decaying implicit scheme, with diagnostics and experiment harnesses.

pub mod diagnostics;
pub mod error;
pub mod fem;
pub mod field;
pub mod harness;
pub mod linalg;
pub mod mesh;
pub mod scheme;
pub mod sparse;

pub use error::{Error, Result};
pub use field::NodalField;
pub use mesh::Mesh;
pub use scheme::{Params, Scheme, SchemeState, StepStatus};
pub use sparse::SparseMatrix;

//! Multipoint stress mixed finite element (MSMFE) methods for linear
//! elasticity with weakly imposed stress symmetry on triangles and
//! tetrahedra.
//!
//! The stress lives in `(BDM1)^d` with degrees of freedom at facet vertices,
//! the displacement in `(P0)^d`, and the reduced rotation `p` in `P0`
//! (MSMFE-0) or continuous `P1` (MSMFE-1). A vertex quadrature rule makes the
//! stress mass matrix block diagonal over mesh vertices so the stress (and,
//! for MSMFE-1, the rotation) can be eliminated locally, leaving a symmetric
//! positive definite cell-centered system that is solved with conjugate
//! gradients.
//!
//! Typical use:
//!
//! ```no_run
//! use msmfe::{harness, Method};
//!
//! let problem = msmfe::problems::example1();
//! let mesh = msmfe::mesh::generate_structured(2, 8).unwrap();
//! let level = harness::solve_level(&mesh, &problem, Method::Msmfe0, &Default::default()).unwrap();
//! println!("{:?}", level.errors);
//! ```

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod error;
pub mod fem_spaces;
pub mod harness;
pub mod linear_solver;
pub mod mesh;
pub mod par;
pub mod postprocess;
pub mod problems;
pub mod quadrature;
pub mod reduction;

pub use error::{Error, Result};
pub use fem_spaces::Method;

/// Points are stored in three components; in 2D the third is zero.
pub type Point = nalgebra::Vector3<f64>;
/// Second-order tensors are stored as 3x3 matrices; in 2D only the upper-left
/// 2x2 block is populated.
pub type Tensor = nalgebra::Matrix3<f64>;

//! Numerical toolkit for elliptic operators on closed Riemannian manifolds.
//!
//! The crate models a handful of closed surfaces (and flat tori of any
//! dimension) by chart atlases with closed-form metrics and provides
//! geodesic coverings with uniform partitions of unity, covariant and
//! patchwise Sobolev norms, finite-difference assembly of the deformation
//! Laplacian `2 Def* Def`, and the spectral experiments built on top of it.

pub mod analysis;
pub mod covering;
pub mod error;
pub mod expr;
pub mod fd;
pub mod field;
pub mod geometry;
pub mod grid;
pub mod jet;
pub mod operators;
pub mod par;
pub mod sobolev;
pub mod sparse;

pub use error::{Error, Result};

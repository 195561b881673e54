//! Regularized conical Kähler-Ricci flow on the sphere with two antipodal
//! cone points, reduced to one dimension by rotational symmetry, together
//! with numerical monitors for the a priori estimates that control the
//! `eps -> 0` limit.
//!
//! Conventions used throughout:
//!
//! * `omega_0` is the round metric of area `4 pi` (Gaussian curvature 1).
//! * Densities are area densities relative to `omega_0`; in complex
//!   dimension one the trace `tr_a b` is the density ratio `b / a`.
//! * `Delta_omega` is the complex Laplacian `tr_omega i ddbar`, which is half
//!   the Riemannian Laplacian. The scalar curvature is `R = tr_omega Ric`,
//!   so the round metric has `R = 1`.
//! * Poincaré constants use the Riemannian Dirichlet energy, giving
//!   `1 / sqrt(2)` on the round sphere.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cascade;
pub mod cli;
pub mod elliptic_init;
pub mod error;
pub mod estimates;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod polar;
pub mod quad;

pub use error::{ConeError, Result};
pub use geometry::{ConeGeometry, GeometryParams};
pub use grid::{FieldKind, GridKind, GridSpec, RadialField, RadialGrid};

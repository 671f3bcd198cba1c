//! Numerical Finsler geometry workbench.
//!
//! Every derivative is taken by truncated multivariate Taylor arithmetic
//! ([`jets`]) on user expressions ([`expr`]). On top of that sit the base
//! manifold tensors ([`finsler`]), the Berwald/Rund connection objects
//! ([`connection`]), autoparallel integration ([`curves`]), maps between
//! structures ([`maps`]), and the 1-jet space torsions and curvatures with
//! their general-formula oracle ([`jetspace`]). [`scenario`] and [`report`]
//! back the command-line front end.

pub mod connection;
pub mod curves;
pub mod error;
pub mod expr;
pub mod finsler;
pub mod jets;
pub mod jetspace;
pub mod maps;
pub mod report;
pub mod sampling;
pub mod scenario;

pub use error::{GeometryError, GeometryResult};
pub use expr::{parse, Expr, ExprError};
pub use finsler::{BasePoint, FinslerStructure};
pub use jets::{JetError, Rational, TaylorValue};

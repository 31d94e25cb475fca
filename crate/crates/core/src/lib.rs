//! Simulation and verification toolkit for semimartingale reflecting Brownian
//! motions (SRBMs) in piecewise-smooth domains.
//!
//! The crate is organised around the data of an SRBM: a domain written as an
//! intersection of smooth patches ([`geometry`]), one reflection field per
//! patch ([`reflection`]), and a driving Brownian motion ([`paths`]). On top of
//! that sit the delta-jump approximation scheme and the oscillation
//! certificate ([`scheme`]), exact checks for convex polyhedra
//! ([`polyhedron`]), and closed-form reflection maps used as references
//! ([`oracle`]).
//!
//! Patch indices are zero-based throughout.

// `!(x > 0.0)` is the NaN-rejecting form; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod geometry;
pub mod linalg;
mod lp;
pub mod oracle;
pub mod paths;
pub mod polyhedron;
pub mod reflection;
pub mod rng;
pub mod scheme;

pub use error::{Error, Result};

//! Numerical toolkit for symmetric vector-valued phase transitions.
//!
//! The crate computes minimizers of the Allen-Cahn energy
//!
//! ```text
//!     J(u) = integral of |grad u|^2 / 2 + W(u)
//! ```
//!
//! for potentials `W` with a finite cyclic symmetry group, in three
//! geometries: the line (heteroclinic connections between wells), circles
//! (periodic fiber minimizers under a twisted closure condition), and the
//! planar disk (equivariant junction profiles).  On top of the solvers sits
//! an analysis layer that measures the radial structure of a disk minimizer:
//! where its circular fibers look like a sharp two-phase transition, how the
//! transition angle drifts with radius, and how fast the field relaxes to a
//! well away from the interface.

pub mod analysis;
pub mod config;
pub mod descent;
pub mod disk;
pub mod error;
pub mod fiber;
pub mod field_io;
pub mod geometry;
pub mod heteroclinic;
pub mod potential;

pub use error::{NjError, Result};
pub use geometry::{Mat2, Vec2};

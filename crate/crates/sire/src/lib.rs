//! Scale-invariant, rotation-equivariant estimation of tubular-structure
//! orientations in 3D images, plus the pieces needed to use and validate it:
//! multi-scale spherical sampling, gauge-equivariant mesh networks, training,
//! iterative centerline tracking, vessel-tree extraction, evaluation metrics
//! and a synthetic tubular phantom generator.
//!
//! See the `guide` module (or the rendered book under `book/`) for a
//! walkthrough of the concepts.

pub mod centerline;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod guide;
pub mod metrics;
pub mod network;
pub mod phantom;
pub mod sampler;
pub mod tracker;
pub mod training;
pub mod volume;

pub use error::{Error, Result};

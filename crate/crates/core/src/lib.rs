//! Set-oriented computation of attractors and invariant measures for
//! discrete dynamical systems whose parameter is only known to lie in a
//! compact set `Λ`.
//!
//! The pipeline has two phases:
//!
//! 1. [`subdivision`] builds an outer box covering of the attractor relative
//!    to an initial box `Q` by alternating bisection of every box with a
//!    selection step that keeps only boxes hit by images of test points under
//!    `f(·, λ)` for a grid of parameters.
//! 2. [`transfer`] assembles a Monte-Carlo Ulam matrix on that covering for a
//!    chosen parameter distribution and extracts its stationary vector, an
//!    approximation of the invariant measure.
//!
//! Systems are looked up by name in a [`dynamics::SystemRegistry`]; the
//! Hénon map and time-`T` maps of the van der Pol and Arneodo flows are
//! pre-registered. [`experiment`] ties the phases together behind a JSON
//! config, and [`render`] draws coverings and measures as SVG.

pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod render;
pub mod sampling;
pub mod subdivision;
pub mod transfer;

pub use dynamics::{DynamicalSystem, Escaped, SystemRegistry, SystemSpec};
pub use error::{Error, Result};
pub use geometry::{BoxPartition, HyperBox};
pub use sampling::{HaltonSequence, ParamMode, ParameterModel};
pub use subdivision::{run_subdivision, selection_step, StopRule, SubdivisionConfig};
pub use transfer::{assemble, deterministic_matrix, invariant_measure, MeasureVector, TransitionMatrix};

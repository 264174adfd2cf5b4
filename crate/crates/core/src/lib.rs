//! Joint segmentation, registration, and atlas generation for sets of 2D
//! grayscale images, followed by geometry-driven PCA of the recovered
//! deformations.
//!
//! The first stage alternates between Potts segmentation of the templates,
//! the evolving atlas, and the segmentation differences, proximal updates of
//! the decoupled deformation-gradient variables under an Ogden stored
//! energy, and an implicit gradient-flow step on each displacement field.
//! The second stage projects the inverse displacements into a linear space
//! with a smoothing-spline fit (Bogner-Fox-Schmit elements, third-order
//! seminorm) that also matches the nonlinear strain samples, and runs a PCA
//! under the L2 inner product to extract modes of variation.

pub mod atlas;
pub mod config;
pub mod dmspline;
pub mod error;
pub mod flow;
pub mod grid;
pub mod ogden;
pub mod potts;
pub mod shapestats;
pub mod synth;

pub use config::SolverConfig;
pub use error::{CoreError, Result};
pub use grid::{Mat2, MatrixGrid, ScalarGrid, VectorGrid};

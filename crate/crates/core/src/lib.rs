//! Random Gaussian graphical model.
//!
//! A joint law over the edges of a random sub-graph of a fixed ambient graph
//! and Gaussian node attributes whose precision is `αI + β·Laplacian`.
//! The crate provides exact small-graph enumeration, two MCMC samplers,
//! O(m²) rank-one covariance maintenance, executable property checks and a
//! pseudo-likelihood fitter.

pub mod catalog;
pub mod cli;
pub mod error;
pub mod fit;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod sampler;
pub mod verify;

pub use error::{Result, RggmError};
pub use graph::{nested_sequence, EdgeConfig, NestedKind, Topology};
pub use linalg::{build_precision, CovarianceState, SymMatrix};
pub use model::{ModelParams, NodeVector};
pub use oracle::{enumerate, MeasureTable};

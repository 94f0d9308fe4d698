//! Principal-subspace analysis of deep feature matrices.
//!
//! The top left singular vector of a `#samples × #features` matrix (the
//! *P-vector*) summarizes where every sample sits along the dominant
//! direction of a representation. This crate computes P-vectors for trained
//! toy networks and raw data, compares them through angles, and turns those
//! angles into convergence trajectories and generalization-gap predictors.

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod rng;
pub mod store;
pub mod subspace;
pub mod toynets;

pub use error::{Error, ErrorClass, FormatError, Result};
pub use linalg::{DenseMatrix, SvdMethod, SvdResult};
pub use rng::SeededRng;
pub use store::{Report, ReportFormat};
pub use subspace::{FeatureMatrix, PVector, Provenance, Split};
pub use toynets::{Checkpoint, ModelKind, ModelSpec, Run, ToyDataset, TrainConfig};

//! Self-expressive network subspace clustering.
//!
//! A pair of small networks maps points to query and key embeddings; their
//! soft-thresholded inner product gives the coefficient that point `i`
//! contributes to reconstructing point `j`. Training minimizes an elastic-net
//! self-expression loss, and the resulting coefficients feed spectral
//! clustering. An exact per-column convex solver is included as a reference.

pub mod data;
pub mod ensc;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod mlp;
pub mod objective;
pub mod rng;
pub mod senet;
pub mod spectral;
pub mod train;

pub use data::{Dataset, PreprocessStep, SyntheticSpec};
pub use ensc::SolverConfig;
pub use error::{Error, Result};
pub use linalg::{DenseMatrix, EigenResult};
pub use metrics::MetricsReport;
pub use mlp::{Activation, MlpParams};
pub use objective::{HyperParams, LossBreakdown};
pub use senet::{CoefficientMatrix, SENetParams};
pub use spectral::{AffinityGraph, AffinityMode, ClusterResult, KMeansConfig, SpectralConfig};
pub use train::{Algorithm, TrainConfig, TrainOutput, TrainRecord};

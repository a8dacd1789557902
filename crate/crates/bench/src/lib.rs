//! Shared fixtures for the benchmarks.

use senet_core::data::gen_synthetic;
use senet_core::{Dataset, SyntheticSpec};

/// Five 6-dimensional subspaces in R^15.
pub fn synthetic(points_per_subspace: usize, seed: u64) -> Dataset {
    gen_synthetic(&SyntheticSpec {
        ambient_dim: 15,
        subspace_dim: 6,
        num_subspaces: 5,
        points_per_subspace,
        seed,
    })
    .expect("valid spec")
}

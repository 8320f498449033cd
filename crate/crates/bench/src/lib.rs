//! Fixtures shared by the benchmarks.

use pdpmf::pdp::{generate_spec, GroupSpecParams, PrivacySpecification};
use pdpmf::ratings::{synth_lowrank, SparseRatings};

/// A synthetic matrix with MovieLens-100K dimensions and rating count.
pub fn movielens_sized() -> SparseRatings {
    synth_lowrank(943, 1682, 10, 100_000.0 / (943.0 * 1682.0), 1)
        .expect("valid synthetic shape")
        .ratings
}

pub fn default_spec(data: &SparseRatings) -> PrivacySpecification {
    generate_spec(data, &GroupSpecParams::default()).expect("default group parameters are valid")
}

//! Matrix factorization recommenders with uniform and personalized
//! differential privacy.
//!
//! Training ratings go through an optional per-rating sampler ([`pdp`]),
//! a non-private factorization ([`pmf`]) and an objective-perturbed refit of
//! the item profiles ([`dp`]). Only the refitted item matrix of a private
//! model is meant to be published.

pub mod dp;
pub mod error;
pub mod eval;
pub mod model;
pub mod noise;
pub mod pdp;
pub mod pmf;
pub mod ratings;
pub mod seed;

pub use dp::{run_dp_pmf, NoiseMode};
pub use error::{Error, Result};
pub use eval::{crossval_run, error_cdf, rmse, EvalReport, Mode, RunConfig};
pub use model::{FactorModel, ProfileMatrix, Release};
pub use noise::{sample_noise, NoiseParams, SensitivityMode};
pub use pdp::{generate_spec, run_pdp_pmf, GroupSpecParams, PrivacySpecification, ThresholdPolicy};
pub use pmf::{train_pmf, TrainConfig, UnitBall};
pub use ratings::{parse_movielens, synth_lowrank, DatasetFormat, Rating, RatingRange, SparseRatings};

//! Noise vectors with density proportional to `exp(-epsilon * |eta| / delta)`.
//!
//! Integrating that density over spheres of radius `r` gives a radial density
//! proportional to `r^(d-1) exp(-epsilon r / delta)`, i.e. the norm is
//! Gamma(d, delta / epsilon) distributed and the direction is uniform. Both
//! parts are sampled exactly: the direction by normalizing a standard
//! Gaussian vector and the norm as a sum of `d` exponentials.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::model::norm;
use crate::ratings::RatingRange;

/// Neighbouring relation used to calibrate the sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitivityMode {
    /// Neighbours differ by adding or removing one rating: `delta = r_max`.
    AddRemove,
    /// Neighbours differ by changing one rating value: `delta = r_max - r_min`.
    /// The personalized mechanism then only guarantees `2 * epsilon_ij`.
    Modify,
}

impl SensitivityMode {
    pub fn delta(self, range: RatingRange) -> f64 {
        match self {
            SensitivityMode::AddRemove => range.max,
            SensitivityMode::Modify => range.max - range.min,
        }
    }
}

impl std::str::FromStr for SensitivityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "add-remove" | "add_remove" => Ok(SensitivityMode::AddRemove),
            "modify" => Ok(SensitivityMode::Modify),
            other => Err(Error::InvalidParameter(format!("unknown sensitivity mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for SensitivityMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SensitivityMode::AddRemove => "add-remove",
            SensitivityMode::Modify => "modify",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    epsilon: f64,
    delta: f64,
    dim: usize,
}

impl NoiseParams {
    pub fn new(epsilon: f64, delta: f64, dim: usize) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidParameter(format!("sensitivity must be positive, got {delta}")));
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("noise dimension must be >= 1".into()));
        }
        Ok(Self { epsilon, delta, dim })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Scale of the Gamma-distributed norm, `delta / epsilon`.
    pub fn scale(&self) -> f64 {
        self.delta / self.epsilon
    }
}

/// Draws one noise vector into `out` (length `params.dim()`).
pub fn sample_noise_into<R: Rng + ?Sized>(params: &NoiseParams, rng: &mut R, out: &mut [f64]) {
    debug_assert_eq!(out.len(), params.dim);
    loop {
        for x in out.iter_mut() {
            *x = StandardNormal.sample(rng);
        }
        let n = norm(out);
        if n > 0.0 {
            let radius: f64 = (0..params.dim).map(|_| -> f64 { Exp1.sample(rng) }).sum::<f64>() * params.scale();
            let k = radius / n;
            out.iter_mut().for_each(|x| *x *= k);
            return;
        }
    }
}

pub fn sample_noise<R: Rng + ?Sized>(params: &NoiseParams, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; params.dim];
    sample_noise_into(params, rng, &mut out);
    out
}

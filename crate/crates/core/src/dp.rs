//! Objective perturbation for the item matrix.
//!
//! With the user matrix fixed, phase 2 minimizes
//!
//! ```text
//! E~(V) = 1/2 sum (r_ij - u_i.v_j)^2 + lambda_u/2 sum |u_i|^2 + lambda_v/2 sum |v_j|^2 + sum_j eta_j.v_j
//! ```
//!
//! by gradient descent started from the phase-1 item matrix. The noise enters
//! the gradient unscaled; gradient normalization only changes the step size,
//! so the calibration of `eta` against the sensitivity is unaffected.

use crate::error::{Error, Result};
use crate::model::{dot, norm, FactorModel, ProfileMatrix, Release};
use crate::noise::{sample_noise_into, NoiseParams, SensitivityMode};
use crate::pmf::{check_dims, check_divergence, half_sse, train_pmf, TrainConfig};
use crate::ratings::SparseRatings;
use crate::seed::{self, tag, StreamRng};

/// Slack allowed on `|u_i| <= 1` for rounding.
const NORM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// Draw each `eta_j` once and keep it for every phase-2 sweep, so the
    /// iterates minimize a single perturbed objective.
    FixedObjective,
    /// Redraw every `eta_j` at each sweep.
    PerIteration,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" | "fixed-objective" | "fixed_objective" => Ok(NoiseMode::FixedObjective),
            "per-iteration" | "per_iteration" => Ok(NoiseMode::PerIteration),
            other => Err(Error::InvalidParameter(format!("unknown noise mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseMode::FixedObjective => "fixed-objective",
            NoiseMode::PerIteration => "per-iteration",
        })
    }
}

/// Source of the item noise matrix `Q = [eta_j]` across phase-2 sweeps.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    current: ProfileMatrix,
    source: Source,
}

#[derive(Debug, Clone)]
enum Source {
    Zero,
    Injected,
    Sampled {
        params: NoiseParams,
        mode: NoiseMode,
        rngs: Vec<StreamRng>,
    },
}

impl NoiseStream {
    /// No perturbation: phase 2 becomes a non-private refit of `V`.
    pub fn zero(items: usize, dim: usize) -> Self {
        Self {
            current: ProfileMatrix::zeros(items, dim),
            source: Source::Zero,
        }
    }

    /// A caller-supplied matrix used for every sweep.
    pub fn injected(noise: ProfileMatrix) -> Self {
        Self {
            current: noise,
            source: Source::Injected,
        }
    }

    /// Sampled noise; item `j` draws from its own stream keyed by its raw id.
    pub fn sampled(params: NoiseParams, mode: NoiseMode, seed: u64, item_ids: &[u64]) -> Self {
        let rngs: Vec<StreamRng> = item_ids.iter().map(|&id| seed::stream(&[seed, tag::NOISE, id])).collect();
        let mut s = Self {
            current: ProfileMatrix::zeros(item_ids.len(), params.dim()),
            source: Source::Sampled { params, mode, rngs },
        };
        s.redraw();
        s
    }

    fn redraw(&mut self) {
        if let Source::Sampled { params, rngs, .. } = &mut self.source {
            for (j, rng) in rngs.iter_mut().enumerate() {
                sample_noise_into(params, rng, self.current.row_mut(j));
            }
        }
    }

    /// Noise for sweep `sweep` (zero-based).
    fn for_sweep(&mut self, sweep: usize) -> Option<&ProfileMatrix> {
        match &self.source {
            Source::Zero => None,
            Source::Injected => Some(&self.current),
            Source::Sampled { mode, .. } => {
                if *mode == NoiseMode::PerIteration && sweep > 0 {
                    self.redraw();
                }
                Some(&self.current)
            }
        }
    }

    /// The noise matrix most recently used (the only one in fixed mode).
    pub fn current(&self) -> &ProfileMatrix {
        &self.current
    }
}

/// The perturbed objective for a fixed user matrix and noise matrix.
#[derive(Debug, Clone, Copy)]
pub struct PerturbedObjective<'a> {
    data: &'a SparseRatings,
    users: &'a ProfileMatrix,
    noise: &'a ProfileMatrix,
    lambda_u: f64,
    lambda_v: f64,
}

impl<'a> PerturbedObjective<'a> {
    pub fn new(
        data: &'a SparseRatings,
        users: &'a ProfileMatrix,
        noise: &'a ProfileMatrix,
        lambda_u: f64,
        lambda_v: f64,
    ) -> Result<Self> {
        if users.rows() != data.num_users() {
            return Err(Error::DimensionMismatch(format!(
                "{} user profiles for {} users",
                users.rows(),
                data.num_users()
            )));
        }
        if noise.rows() != data.num_items() || noise.dim() != users.dim() {
            return Err(Error::DimensionMismatch(format!(
                "noise is {}x{}, expected {}x{}",
                noise.rows(),
                noise.dim(),
                data.num_items(),
                users.dim()
            )));
        }
        check_user_norms(users)?;
        Ok(Self {
            data,
            users,
            noise,
            lambda_u,
            lambda_v,
        })
    }

    fn check_items(&self, items: &ProfileMatrix) -> Result<()> {
        if items.rows() != self.data.num_items() || items.dim() != self.users.dim() {
            return Err(Error::DimensionMismatch(format!(
                "item matrix is {}x{}, expected {}x{}",
                items.rows(),
                items.dim(),
                self.data.num_items(),
                self.users.dim()
            )));
        }
        Ok(())
    }

    pub fn value(&self, items: &ProfileMatrix) -> Result<f64> {
        self.check_items(items)?;
        let linear: f64 = self
            .noise
            .iter_rows()
            .zip(items.iter_rows())
            .map(|(eta, v)| dot(eta, v))
            .sum();
        Ok(half_sse(self.data, self.users, items)
            + 0.5 * self.lambda_u * self.users.sum_squared_norms()
            + 0.5 * self.lambda_v * items.sum_squared_norms()
            + linear)
    }

    /// Gradient with respect to `v_j`.
    pub fn grad(&self, items: &ProfileMatrix, item: usize) -> Result<Vec<f64>> {
        self.check_items(items)?;
        if item >= items.rows() {
            return Err(Error::IndexOutOfRange {
                kind: "item",
                index: item,
                count: items.rows(),
            });
        }
        let v = items.row(item);
        let mut g: Vec<f64> = v
            .iter()
            .zip(self.noise.row(item))
            .map(|(x, eta)| self.lambda_v * x + eta)
            .collect();
        for e in self.data.entries().iter().filter(|e| e.item as usize == item) {
            let u = self.users.row(e.user as usize);
            let r = e.value - dot(u, v);
            for (gk, uk) in g.iter_mut().zip(u) {
                *gk -= r * uk;
            }
        }
        Ok(g)
    }
}

pub(crate) fn check_user_norms(users: &ProfileMatrix) -> Result<()> {
    for (i, u) in users.iter_rows().enumerate() {
        let n = norm(u);
        if n.is_nan() || n > 1.0 + NORM_SLACK {
            return Err(Error::UserNormBound { user: i, norm: n });
        }
    }
    Ok(())
}

/// Runs `cfg.phase2_iters` sweeps on `items` with `users` held fixed.
pub fn descend_items(
    data: &SparseRatings,
    users: &ProfileMatrix,
    items: &mut ProfileMatrix,
    cfg: &TrainConfig,
    noise: &mut NoiseStream,
) -> Result<()> {
    if users.rows() != data.num_users() || items.rows() != data.num_items() || users.dim() != items.dim() {
        return Err(Error::DimensionMismatch("phase-2 profiles do not match the data".into()));
    }
    let step = cfg.step_size(data.len());
    let lv = cfg.lambda_v;
    let reg_u = 0.5 * cfg.lambda_u * users.sum_squared_norms();
    let mut g = ProfileMatrix::zeros(items.rows(), items.dim());
    for sweep in 0..cfg.phase2_iters {
        let eta = noise.for_sweep(sweep);
        for (gk, x) in g.as_mut_slice().iter_mut().zip(items.as_slice()) {
            *gk = lv * x;
        }
        let mut linear = 0.0;
        if let Some(eta) = eta {
            for (gk, e) in g.as_mut_slice().iter_mut().zip(eta.as_slice()) {
                *gk += e;
            }
            linear = dot(eta.as_slice(), items.as_slice());
        }
        let mut sse = 0.0;
        for e in data.entries() {
            let j = e.item as usize;
            let u = users.row(e.user as usize);
            let r = e.value - dot(u, items.row(j));
            sse += r * r;
            for (gk, uk) in g.row_mut(j).iter_mut().zip(u) {
                *gk -= r * uk;
            }
        }
        let obj = 0.5 * sse + reg_u + 0.5 * lv * items.sum_squared_norms() + linear;
        check_divergence(sweep, obj)?;
        for (x, gk) in items.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *x -= step * gk;
        }
    }
    if !items.is_finite() {
        return Err(Error::Diverged {
            iteration: cfg.phase2_iters,
            objective: f64::NAN,
        });
    }
    Ok(())
}

/// Phase 2: perturbed item matrix for budget `epsilon`, starting from the
/// phase-1 model's `V`.
#[allow(clippy::too_many_arguments)]
pub fn train_dp_v(
    data: &SparseRatings,
    phase1: &FactorModel,
    epsilon: f64,
    cfg: &TrainConfig,
    smode: SensitivityMode,
    nmode: NoiseMode,
    noise_seed: u64,
) -> Result<ProfileMatrix> {
    cfg.validate()?;
    check_dims(data, phase1)?;
    check_user_norms(phase1.users())?;
    let params = NoiseParams::new(epsilon, smode.delta(data.range()), cfg.dim)?;
    let mut noise = NoiseStream::sampled(params, nmode, noise_seed, data.item_ids());
    let mut items = phase1.items().clone();
    descend_items(data, phase1.users(), &mut items, cfg, &mut noise)?;
    Ok(items)
}

/// Non-private counterpart of [`train_dp_v`]: the same phase-2 sweeps with no
/// noise.
pub fn refit_items(data: &SparseRatings, phase1: &FactorModel, cfg: &TrainConfig) -> Result<ProfileMatrix> {
    cfg.validate()?;
    check_dims(data, phase1)?;
    let mut noise = NoiseStream::zero(data.num_items(), cfg.dim);
    let mut items = phase1.items().clone();
    descend_items(data, phase1.users(), &mut items, cfg, &mut noise)?;
    Ok(items)
}

/// Seed of the phase-2 noise streams for a training seed.
pub fn noise_seed(train_seed: u64) -> u64 {
    seed::derive(&[train_seed, tag::NOISE])
}

/// Two-step uniform-budget scheme: non-private phase 1 keeps `U` private,
/// phase 2 publishes the perturbed `V`.
pub fn run_dp_pmf(
    data: &SparseRatings,
    epsilon: f64,
    cfg: &TrainConfig,
    smode: SensitivityMode,
    nmode: NoiseMode,
) -> Result<FactorModel> {
    let phase1 = train_pmf(data, cfg)?;
    let items = train_dp_v(data, &phase1, epsilon, cfg, smode, nmode, noise_seed(cfg.seed))?;
    let (users, _) = phase1.into_parts();
    Ok(FactorModel::new(users, items, data.range()).with_release(Release::ItemsOnly))
}

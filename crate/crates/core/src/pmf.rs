//! Non-private probabilistic matrix factorization trained by full-batch
//! gradient descent.
//!
//! The objective is
//!
//! ```text
//! E(U, V) = 1/2 sum_(i,j) (r_ij - u_i.v_j)^2 + lambda_u/2 sum_i |u_i|^2 + lambda_v/2 sum_j |v_j|^2
//! ```
//!
//! Each sweep computes every gradient from the previous iterate and only then
//! applies the updates.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{dot, norm, FactorModel, ProfileMatrix};
use crate::ratings::SparseRatings;
use crate::seed::{self, tag};

/// Objective magnitude treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// How the `|u_i| <= 1` bound is established once phase 1 ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitBall {
    /// Scale every `u_i` by `c = 1 / max_i |u_i|` (when that exceeds one) and
    /// every `v_j` by `1 / c`. All inner products are unchanged.
    Rescale,
    /// Project each `u_i` onto the closed unit ball independently.
    Project,
}

impl std::str::FromStr for UnitBall {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rescale" => Ok(UnitBall::Rescale),
            "project" => Ok(UnitBall::Project),
            other => Err(Error::InvalidParameter(format!("unknown unit-ball mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for UnitBall {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UnitBall::Rescale => "rescale",
            UnitBall::Project => "project",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Latent dimension `d`.
    pub dim: usize,
    /// Learning rate `gamma`.
    pub learning_rate: f64,
    pub lambda_u: f64,
    pub lambda_v: f64,
    /// Phase-1 sweeps `k1`.
    pub phase1_iters: usize,
    /// Phase-2 sweeps `k2`.
    pub phase2_iters: usize,
    pub seed: u64,
    /// Divide every gradient by the number of training ratings, i.e. take
    /// steps of `gamma / |entries|` on the unnormalized objective.
    pub grad_normalization: bool,
    /// Project each `u_i` onto the unit ball after every phase-1 sweep.
    pub project_each_sweep: bool,
    pub unit_ball: UnitBall,
}

impl Default for TrainConfig {
    /// d = 20, gamma = 50, lambda_u = lambda_v = 0.01, k1 = k2 = 50.
    fn default() -> Self {
        Self {
            dim: 20,
            learning_rate: 50.0,
            lambda_u: 0.01,
            lambda_v: 0.01,
            phase1_iters: 50,
            phase2_iters: 50,
            seed: 0,
            grad_normalization: true,
            project_each_sweep: false,
            unit_ball: UnitBall::Rescale,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {x}")))
            }
        };
        positive("learning rate", self.learning_rate)?;
        positive("lambda_u", self.lambda_u)?;
        positive("lambda_v", self.lambda_v)?;
        if self.dim == 0 {
            return Err(Error::InvalidParameter("latent dimension must be >= 1".into()));
        }
        if self.phase1_iters == 0 || self.phase2_iters == 0 {
            return Err(Error::InvalidParameter("k1 and k2 must be >= 1".into()));
        }
        Ok(())
    }

    /// Step applied to raw gradients for a training set of `n` ratings.
    pub fn step_size(&self, n: usize) -> f64 {
        if self.grad_normalization {
            self.learning_rate / n.max(1) as f64
        } else {
            self.learning_rate
        }
    }

    pub fn echo(&self) -> Vec<(String, String)> {
        vec![
            ("d".into(), self.dim.to_string()),
            ("gamma".into(), self.learning_rate.to_string()),
            ("lambda_u".into(), self.lambda_u.to_string()),
            ("lambda_v".into(), self.lambda_v.to_string()),
            ("k1".into(), self.phase1_iters.to_string()),
            ("k2".into(), self.phase2_iters.to_string()),
            ("train_seed".into(), self.seed.to_string()),
            ("grad_normalization".into(), self.grad_normalization.to_string()),
            ("project_each_sweep".into(), self.project_each_sweep.to_string()),
            ("unit_ball".into(), self.unit_ball.to_string()),
        ]
    }
}

pub(crate) fn check_dims(data: &SparseRatings, model: &FactorModel) -> Result<()> {
    if model.users().rows() != data.num_users() || model.items().rows() != data.num_items() {
        return Err(Error::DimensionMismatch(format!(
            "model is {}x{}, data is {}x{}",
            model.users().rows(),
            model.items().rows(),
            data.num_users(),
            data.num_items()
        )));
    }
    Ok(())
}

/// Half the sum of squared residuals over the observed entries.
pub(crate) fn half_sse(data: &SparseRatings, users: &ProfileMatrix, items: &ProfileMatrix) -> f64 {
    0.5 * data
        .entries()
        .iter()
        .map(|e| {
            let r = e.value - dot(users.row(e.user as usize), items.row(e.item as usize));
            r * r
        })
        .sum::<f64>()
}

/// Regularized squared-error objective at `model`.
pub fn objective(data: &SparseRatings, model: &FactorModel, cfg: &TrainConfig) -> Result<f64> {
    check_dims(data, model)?;
    Ok(half_sse(data, model.users(), model.items())
        + 0.5 * cfg.lambda_u * model.users().sum_squared_norms()
        + 0.5 * cfg.lambda_v * model.items().sum_squared_norms())
}

/// Exact gradient of [`objective`] with respect to `u_i`.
pub fn grad_u(data: &SparseRatings, model: &FactorModel, cfg: &TrainConfig, user: usize) -> Result<Vec<f64>> {
    check_dims(data, model)?;
    if user >= data.num_users() {
        return Err(Error::IndexOutOfRange {
            kind: "user",
            index: user,
            count: data.num_users(),
        });
    }
    let u = model.users().row(user);
    let mut g: Vec<f64> = u.iter().map(|x| cfg.lambda_u * x).collect();
    for e in data.entries().iter().filter(|e| e.user as usize == user) {
        let v = model.items().row(e.item as usize);
        let r = e.value - dot(u, v);
        for (gk, vk) in g.iter_mut().zip(v) {
            *gk -= r * vk;
        }
    }
    Ok(g)
}

/// Exact gradient of [`objective`] with respect to `v_j`.
pub fn grad_v(data: &SparseRatings, model: &FactorModel, cfg: &TrainConfig, item: usize) -> Result<Vec<f64>> {
    check_dims(data, model)?;
    if item >= data.num_items() {
        return Err(Error::IndexOutOfRange {
            kind: "item",
            index: item,
            count: data.num_items(),
        });
    }
    let v = model.items().row(item);
    let mut g: Vec<f64> = v.iter().map(|x| cfg.lambda_v * x).collect();
    for e in data.entries().iter().filter(|e| e.item as usize == item) {
        let u = model.users().row(e.user as usize);
        let r = e.value - dot(u, v);
        for (gk, uk) in g.iter_mut().zip(u) {
            *gk -= r * uk;
        }
    }
    Ok(g)
}

/// Independent uniform random unit vectors, one stream per raw entity id.
pub(crate) fn random_unit_rows(ids: &[u64], dim: usize, seed: u64, kind: u64) -> ProfileMatrix {
    let mut m = ProfileMatrix::zeros(ids.len(), dim);
    for (i, &id) in ids.iter().enumerate() {
        let mut rng = seed::stream(&[seed, kind, id]);
        let row = m.row_mut(i);
        loop {
            for x in row.iter_mut() {
                *x = StandardNormal.sample(&mut rng);
            }
            let n = norm(row);
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
                break;
            }
        }
    }
    m
}

/// Initial model: every `u_i` and `v_j` an independent uniform unit vector.
pub fn init_model(data: &SparseRatings, cfg: &TrainConfig) -> FactorModel {
    FactorModel::new(
        random_unit_rows(data.user_ids(), cfg.dim, cfg.seed, tag::USER_INIT),
        random_unit_rows(data.item_ids(), cfg.dim, cfg.seed, tag::ITEM_INIT),
        data.range(),
    )
}

pub(crate) fn check_divergence(iteration: usize, objective: f64) -> Result<()> {
    if !objective.is_finite() || objective.abs() > DIVERGENCE_LIMIT {
        return Err(Error::Diverged { iteration, objective });
    }
    Ok(())
}

fn project_rows(m: &mut ProfileMatrix) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let n = norm(row);
        if n > 1.0 {
            row.iter_mut().for_each(|x| *x /= n);
        }
    }
}

/// Establishes `max_i |u_i| <= 1`.
pub fn enforce_unit_ball(model: &mut FactorModel, mode: UnitBall) {
    match mode {
        UnitBall::Project => project_rows(model.users_mut()),
        UnitBall::Rescale => {
            let max = model.users().max_row_norm();
            if max > 1.0 {
                model.users_mut().as_mut_slice().iter_mut().for_each(|x| *x /= max);
                model.items_mut().as_mut_slice().iter_mut().for_each(|x| *x *= max);
                // Division can leave a norm a few ulps above one.
                project_rows(model.users_mut());
            }
        }
    }
}

/// One synchronous sweep. Fills `gu`/`gv` with the full gradients at the
/// current iterate, applies `x -= step * g`, and returns the objective at the
/// iterate the gradients were taken from.
pub(crate) fn sweep(
    data: &SparseRatings,
    model: &mut FactorModel,
    cfg: &TrainConfig,
    step: f64,
    gu: &mut ProfileMatrix,
    gv: &mut ProfileMatrix,
) -> f64 {
    let (lu, lv) = (cfg.lambda_u, cfg.lambda_v);
    for (g, x) in gu.as_mut_slice().iter_mut().zip(model.users().as_slice()) {
        *g = lu * x;
    }
    for (g, x) in gv.as_mut_slice().iter_mut().zip(model.items().as_slice()) {
        *g = lv * x;
    }
    let mut sse = 0.0;
    for e in data.entries() {
        let (i, j) = (e.user as usize, e.item as usize);
        let u = model.users().row(i);
        let v = model.items().row(j);
        let r = e.value - dot(u, v);
        sse += r * r;
        for (g, vk) in gu.row_mut(i).iter_mut().zip(v) {
            *g -= r * vk;
        }
        for (g, uk) in gv.row_mut(j).iter_mut().zip(u) {
            *g -= r * uk;
        }
    }
    let obj = 0.5 * sse
        + 0.5 * lu * model.users().sum_squared_norms()
        + 0.5 * lv * model.items().sum_squared_norms();
    for (x, g) in model.users_mut().as_mut_slice().iter_mut().zip(gu.as_slice()) {
        *x -= step * g;
    }
    for (x, g) in model.items_mut().as_mut_slice().iter_mut().zip(gv.as_slice()) {
        *x -= step * g;
    }
    obj
}

/// Runs `cfg.phase1_iters` sweeps from `model`.
pub fn descend(data: &SparseRatings, model: &mut FactorModel, cfg: &TrainConfig) -> Result<()> {
    check_dims(data, model)?;
    let step = cfg.step_size(data.len());
    let mut gu = ProfileMatrix::zeros(data.num_users(), cfg.dim);
    let mut gv = ProfileMatrix::zeros(data.num_items(), cfg.dim);
    for it in 0..cfg.phase1_iters {
        let obj = sweep(data, model, cfg, step, &mut gu, &mut gv);
        check_divergence(it, obj)?;
        if cfg.project_each_sweep {
            project_rows(model.users_mut());
        }
    }
    check_divergence(cfg.phase1_iters, objective(data, model, cfg)?)?;
    Ok(())
}

/// Phase 1: trains `U` and `V` on `data` and bounds every `|u_i|` by one.
pub fn train_pmf(data: &SparseRatings, cfg: &TrainConfig) -> Result<FactorModel> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidData("cannot train on an empty rating set".into()));
    }
    let mut model = init_model(data, cfg);
    descend(data, &mut model, cfg)?;
    enforce_unit_ball(&mut model, cfg.unit_ball);
    Ok(model)
}

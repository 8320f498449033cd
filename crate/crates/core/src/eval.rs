//! Held-out evaluation: RMSE, the absolute-error CDF and k-fold cross-validation.
//!
//! Predictions are always clamped to the rating range before errors are taken.

use std::io::Write;

use crate::dp::{run_dp_pmf, NoiseMode};
use crate::error::{Error, Result};
use crate::model::FactorModel;
use crate::noise::SensitivityMode;
use crate::pdp::{generate_spec, run_pdp_pmf, GroupSpecParams, ThresholdPolicy};
use crate::pmf::{train_pmf, TrainConfig};
use crate::ratings::{split_folds, RatingRange, SparseRatings};
use crate::seed::{self, tag};

fn absolute_errors(model: &FactorModel, test: &SparseRatings) -> Result<Vec<f64>> {
    if test.is_empty() {
        return Err(Error::InvalidData("cannot evaluate on an empty test set".into()));
    }
    if test.num_users() > model.users().rows() || test.num_items() > model.items().rows() {
        return Err(Error::DimensionMismatch(format!(
            "test set spans {}x{} but the model covers {}x{}",
            test.num_users(),
            test.num_items(),
            model.users().rows(),
            model.items().rows()
        )));
    }
    test.entries()
        .iter()
        .map(|e| Ok((model.predict(e.user as usize, e.item as usize)? - e.value).abs()))
        .collect()
}

/// Sum of squared clamped-prediction errors and the number of test ratings.
pub fn squared_error_sum(model: &FactorModel, test: &SparseRatings) -> Result<(f64, usize)> {
    let errs = absolute_errors(model, test)?;
    Ok((errs.iter().map(|e| e * e).sum(), errs.len()))
}

pub fn rmse(model: &FactorModel, test: &SparseRatings) -> Result<f64> {
    let (sse, n) = squared_error_sum(model, test)?;
    Ok((sse / n as f64).sqrt())
}

/// `0.0, 0.1, ..., r_max`.
pub fn default_thresholds(range: RatingRange) -> Vec<f64> {
    let steps = (range.max * 10.0).round() as usize;
    (0..=steps).map(|i| i as f64 / 10.0).collect()
}

fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter("CDF thresholds must be non-negative and ascending".into()));
    }
    Ok(())
}

fn cdf_of(mut errs: Vec<f64>, thresholds: &[f64]) -> Vec<f64> {
    errs.sort_by(f64::total_cmp);
    let n = errs.len() as f64;
    thresholds
        .iter()
        .map(|x| errs.partition_point(|e| e <= x) as f64 / n)
        .collect()
}

/// Fraction of test ratings with `|prediction - rating| <= x` for each `x`.
pub fn error_cdf(model: &FactorModel, test: &SparseRatings, thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_thresholds(thresholds)?;
    let fractions = cdf_of(absolute_errors(model, test)?, thresholds);
    Ok(thresholds.iter().copied().zip(fractions).collect())
}

/// What a cross-validation run trains on each fold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Plain,
    Dp { epsilon: f64 },
    Pdp { groups: GroupSpecParams, policy: ThresholdPolicy },
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Plain => "pmf",
            Mode::Dp { .. } => "dp-pmf",
            Mode::Pdp { .. } => "pdp-pmf",
        }
    }

    pub fn echo(&self) -> Vec<(String, String)> {
        let mut out = vec![("mode".to_string(), self.name().to_string())];
        match self {
            Mode::Plain => {}
            Mode::Dp { epsilon } => out.push(("epsilon".into(), epsilon.to_string())),
            Mode::Pdp { groups, policy } => {
                out.extend(groups.echo());
                out.push(("threshold_policy".into(), policy.to_string()));
            }
        }
        out
    }
}

/// Training options shared by every fold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub sensitivity: SensitivityMode,
    pub noise: NoiseMode,
    pub folds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            sensitivity: SensitivityMode::AddRemove,
            noise: NoiseMode::FixedObjective,
            folds: 10,
        }
    }
}

impl RunConfig {
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut out = self.train.echo();
        out.push(("sensitivity".into(), self.sensitivity.to_string()));
        out.push(("noise_mode".into(), self.noise.to_string()));
        out.push(("folds".into(), self.folds.to_string()));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub sse: f64,
    pub rmse: f64,
    /// Sampling threshold, for personalized runs.
    pub threshold: Option<f64>,
    /// Ratings that survived sampling, for personalized runs.
    pub sampled: Option<usize>,
    pub cdf: Vec<f64>,
}

/// Cross-validated metrics. `rmse` is the unweighted mean of the per-fold
/// RMSEs and `cdf` the pointwise mean of the per-fold CDFs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rmse: f64,
    /// Sample standard deviation of the per-fold RMSEs.
    pub rmse_std: f64,
    pub n_test: usize,
    pub thresholds: Vec<f64>,
    pub cdf: Vec<f64>,
    pub folds: Vec<FoldResult>,
    pub config: Vec<(String, String)>,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn cdf_points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.thresholds.iter().copied().zip(self.cdf.iter().copied())
    }

    /// Mean CDF at `x`, if `x` is one of the evaluated thresholds.
    pub fn cdf_at(&self, x: f64) -> Option<f64> {
        self.cdf_points().find(|(t, _)| (t - x).abs() < 1e-9).map(|(_, f)| f)
    }

    fn write_echo<W: Write>(&self, out: &mut W) -> Result<()> {
        for (k, v) in &self.config {
            writeln!(out, "# {k}={v}")?;
        }
        Ok(())
    }

    /// `metric,value` block followed by a `threshold,fraction` table.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        self.write_echo(&mut out)?;
        writeln!(out, "metric,value")?;
        writeln!(out, "rmse,{}", self.rmse)?;
        writeln!(out, "rmse_std,{}", self.rmse_std)?;
        writeln!(out, "n_test,{}", self.n_test)?;
        writeln!(out, "folds,{}", self.folds.len())?;
        writeln!(out, "predictions,clamped")?;
        writeln!(out)?;
        writeln!(out, "threshold,fraction")?;
        for (x, f) in self.cdf_points() {
            writeln!(out, "{x},{f}")?;
        }
        Ok(())
    }

    /// One line per fold.
    pub fn write_folds_csv<W: Write>(&self, mut out: W) -> Result<()> {
        self.write_echo(&mut out)?;
        writeln!(out, "fold,n_train,n_test,sse,rmse,threshold,sampled")?;
        for f in &self.folds {
            let t = f.threshold.map(|t| t.to_string()).unwrap_or_default();
            let s = f.sampled.map(|s| s.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{},{t},{s}", f.fold, f.n_train, f.n_test, f.sse, f.rmse)?;
        }
        Ok(())
    }
}

/// Training seed of one fold.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed::derive(&[seed, tag::TRAIN, fold as u64])
}

/// Trains one model for `mode` on `train`.
pub fn train_mode(
    train: &SparseRatings,
    mode: &Mode,
    run: &RunConfig,
    seed: u64,
) -> Result<(FactorModel, Option<f64>, Option<usize>)> {
    let cfg = TrainConfig { seed, ..run.train };
    match mode {
        Mode::Plain => Ok((train_pmf(train, &cfg)?, None, None)),
        Mode::Dp { epsilon } => Ok((run_dp_pmf(train, *epsilon, &cfg, run.sensitivity, run.noise)?, None, None)),
        Mode::Pdp { groups, policy } => {
            let groups = GroupSpecParams {
                seed: seed::derive(&[groups.seed, seed, tag::SPEC]),
                ..*groups
            };
            let spec = generate_spec(train, &groups)?;
            let out = run_pdp_pmf(train, &spec, *policy, &cfg, run.sensitivity, run.noise)?;
            Ok((out.model, Some(out.threshold), Some(out.sampled)))
        }
    }
}

/// k-fold cross-validation. Fold assignment depends only on `seed`, and each
/// fold's training streams only on `(seed, fold)`, so different modes run
/// with the same seed see identical splits and initializations.
pub fn crossval_run(data: &SparseRatings, mode: &Mode, run: &RunConfig, seed: u64) -> Result<EvalReport> {
    run.train.validate()?;
    let thresholds = default_thresholds(data.range());
    let split = split_folds(data, run.folds, seed)?;
    let mut folds = Vec::with_capacity(run.folds);
    for fold in 0..run.folds {
        let (train, test) = split.train_test(data, fold)?;
        let (model, threshold, sampled) = train_mode(&train, mode, run, fold_seed(seed, fold))?;
        let errs = absolute_errors(&model, &test)?;
        let sse: f64 = errs.iter().map(|e| e * e).sum();
        folds.push(FoldResult {
            fold,
            n_train: train.len(),
            n_test: test.len(),
            sse,
            rmse: (sse / test.len() as f64).sqrt(),
            threshold,
            sampled,
            cdf: cdf_of(errs, &thresholds),
        });
    }
    let rmses: Vec<f64> = folds.iter().map(|f| f.rmse).collect();
    let (rmse, rmse_std) = mean_std(&rmses);
    let cdf = (0..thresholds.len())
        .map(|k| folds.iter().map(|f| f.cdf[k]).sum::<f64>() / folds.len() as f64)
        .collect();
    let mut config = mode.echo();
    config.extend(run.echo());
    config.push(("cv_seed".into(), seed.to_string()));
    config.push(("predictions".into(), "clamped".into()));
    Ok(EvalReport {
        rmse,
        rmse_std,
        n_test: folds.iter().map(|f| f.n_test).sum(),
        thresholds,
        cdf,
        folds,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ProfileMatrix;
    use crate::ratings::{synth_lowrank, Rating};

    fn scalar_model(preds: &[f64]) -> FactorModel {
        let users = ProfileMatrix::from_rows(1, 1, vec![1.0]).unwrap();
        let items = ProfileMatrix::from_rows(preds.len(), 1, preds.to_vec()).unwrap();
        FactorModel::new(users, items, RatingRange::MOVIELENS)
    }

    fn test_set(values: &[f64]) -> SparseRatings {
        let entries = values
            .iter()
            .enumerate()
            .map(|(j, &value)| Rating { user: 0, item: j as u32, value })
            .collect();
        SparseRatings::new(1, values.len(), entries, RatingRange::MOVIELENS).unwrap()
    }

    #[test]
    fn rmse_basics() {
        assert_eq!(rmse(&scalar_model(&[4.0, 2.0]), &test_set(&[4.0, 2.0])).unwrap(), 0.0);
        assert_eq!(rmse(&scalar_model(&[3.0]), &test_set(&[4.0])).unwrap(), 1.0);
        // 7.5 clamps to 5.
        assert_eq!(rmse(&scalar_model(&[7.5]), &test_set(&[4.0])).unwrap(), 1.0);
        assert!(rmse(&scalar_model(&[]), &test_set(&[])).is_err());
    }

    #[test]
    fn cdf_boundaries() {
        let model = scalar_model(&[4.0, 3.0, 1.0, 9.0]);
        let test = test_set(&[4.0, 3.5, 5.0, 1.0]);
        let cdf = error_cdf(&model, &test, &default_thresholds(RatingRange::MOVIELENS)).unwrap();
        assert_eq!(cdf.len(), 51);
        assert_eq!(cdf[0], (0.0, 0.25));
        assert_eq!(cdf[5].1, 0.5);
        assert_eq!(cdf[40].1, 1.0);
        assert_eq!(cdf.last().unwrap(), &(5.0, 1.0));
        assert!(cdf.windows(2).all(|w| w[0].1 <= w[1].1));
        assert!(error_cdf(&model, &test, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn default_threshold_grid() {
        let t = default_thresholds(RatingRange::MOVIELENS);
        assert_eq!(t.len(), 51);
        assert_eq!(t[13], 1.3);
        assert_eq!(t[50], 5.0);
    }

    #[test]
    fn mean_std_values() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn crossval_report_shape() {
        let s = synth_lowrank(30, 20, 2, 0.5, 3).unwrap();
        let run = RunConfig {
            train: TrainConfig { dim: 2, learning_rate: 0.02, grad_normalization: false, phase1_iters: 30, phase2_iters: 10, ..Default::default() },
            folds: 3,
            ..Default::default()
        };
        let report = crossval_run(&s.ratings, &Mode::Plain, &run, 11).unwrap();
        assert_eq!(report.folds.len(), 3);
        assert_eq!(report.n_test, s.ratings.len());
        let pooled: f64 = report.folds.iter().map(|f| (f.sse / f.n_test as f64).sqrt()).sum::<f64>() / 3.0;
        assert!((pooled - report.rmse).abs() < 1e-9);
        assert_eq!(*report.cdf.last().unwrap(), 1.0);
        assert_eq!(report, crossval_run(&s.ratings, &Mode::Plain, &run, 11).unwrap());

        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("# mode=pmf\n"));
        assert!(text.contains("metric,value\nrmse,"));
        assert!(text.contains("threshold,fraction\n0,"));
    }
}

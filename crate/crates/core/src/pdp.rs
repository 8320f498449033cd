//! Personalized privacy: per-rating budgets and the sampling mechanism.
//!
//! Each training rating `r_ij` is kept with probability
//!
//! ```text
//! pi(eps_ij, t) = (e^eps_ij - 1) / (e^t - 1)   if t > eps_ij
//!               = 1                           otherwise
//! ```
//!
//! and the sampled matrix is handed to the uniform `t`-DP two-step trainer.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::dp::{run_dp_pmf, NoiseMode};
use crate::error::{Error, Result};
use crate::model::FactorModel;
use crate::noise::SensitivityMode;
use crate::pmf::TrainConfig;
use crate::ratings::SparseRatings;
use crate::seed::{self, tag};

/// Budget assumed for ratings whose owner expressed no preference.
pub const DEFAULT_EPSILON: f64 = 1.0;

/// One budget per observed rating, aligned with the entries of the
/// [`SparseRatings`] it was built for. Unobserved pairs have no budget.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacySpecification {
    epsilons: Vec<f64>,
}

impl PrivacySpecification {
    pub fn new(epsilons: Vec<f64>) -> Result<Self> {
        if let Some((k, e)) = epsilons.iter().enumerate().find(|(_, e)| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::InvalidParameter(format!("budget {e} at rating {k} is not positive")));
        }
        Ok(Self { epsilons })
    }

    /// Every rating at [`DEFAULT_EPSILON`].
    pub fn uniform_default(data: &SparseRatings) -> Self {
        Self {
            epsilons: vec![DEFAULT_EPSILON; data.len()],
        }
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn len(&self) -> usize {
        self.epsilons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epsilons.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.epsilons.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.epsilons.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.epsilons.iter().sum::<f64>() / self.epsilons.len() as f64
    }

    /// Writes `user,item,epsilon` rows with raw ids.
    pub fn write_csv<W: Write>(&self, data: &SparseRatings, mut out: W) -> Result<()> {
        check_coverage(data, self)?;
        writeln!(out, "user,item,epsilon")?;
        for (e, eps) in data.entries().iter().zip(&self.epsilons) {
            writeln!(out, "{},{},{eps:?}", data.user_id(e.user), data.item_id(e.item))?;
        }
        Ok(())
    }
}

/// A specification read from a `user,item,epsilon` file, keyed by raw ids.
#[derive(Debug, Clone, Default)]
pub struct SpecTable {
    budgets: HashMap<(u64, u64), f64>,
}

impl SpecTable {
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut budgets = HashMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || (lineno == 0 && line.starts_with("user")) {
                continue;
            }
            let bad = |m: &str| Error::InvalidParameter(format!("spec line {}: {m}", lineno + 1));
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [user, item, eps] = fields[..] else {
                return Err(bad("expected `user,item,epsilon`"));
            };
            let key = (
                user.parse().map_err(|_| bad("bad user id"))?,
                item.parse().map_err(|_| bad("bad item id"))?,
            );
            let eps: f64 = eps.parse().map_err(|_| bad("bad epsilon"))?;
            if !(eps.is_finite() && eps > 0.0) {
                return Err(bad("epsilon must be positive"));
            }
            if budgets.insert(key, eps).is_some() {
                return Err(bad("duplicate user-item pair"));
            }
        }
        Ok(Self { budgets })
    }

    pub fn len(&self) -> usize {
        self.budgets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.budgets.is_empty()
    }

    /// Aligns the table with `data`; every rating must have a budget.
    pub fn align(&self, data: &SparseRatings) -> Result<PrivacySpecification> {
        let epsilons = data
            .entries()
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let key = (data.user_id(e.user), data.item_id(e.item));
                self.budgets.get(&key).copied().ok_or(Error::SpecCoverage {
                    index: k,
                    user: key.0,
                    item: key.1,
                })
            })
            .collect::<Result<_>>()?;
        Ok(PrivacySpecification { epsilons })
    }
}

/// Three-level privacy groups: conservative ratings draw a budget uniformly
/// from `[eps_c, eps_m)`, moderate ones from `[eps_m, eps_l)`, liberal ones
/// get exactly `eps_l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSpecParams {
    pub frac_conservative: f64,
    pub frac_moderate: f64,
    pub eps_conservative: f64,
    pub eps_moderate: f64,
    pub eps_liberal: f64,
    pub seed: u64,
}

impl Default for GroupSpecParams {
    fn default() -> Self {
        Self {
            frac_conservative: 0.54,
            frac_moderate: 0.37,
            eps_conservative: 0.1,
            eps_moderate: 0.2,
            eps_liberal: 1.0,
            seed: 0,
        }
    }
}

impl GroupSpecParams {
    pub fn frac_liberal(&self) -> f64 {
        1.0 - self.frac_conservative - self.frac_moderate
    }

    pub fn validate(&self) -> Result<()> {
        let (fc, fm) = (self.frac_conservative, self.frac_moderate);
        if !(fc >= 0.0 && fm >= 0.0 && fc + fm <= 1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "group fractions f_c={fc}, f_m={fm} must be non-negative with f_c + f_m <= 1"
            )));
        }
        let (c, m, l) = (self.eps_conservative, self.eps_moderate, self.eps_liberal);
        if !(c > 0.0 && c < m && m < l && l.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "budget breakpoints must satisfy 0 < eps_c < eps_m < eps_l, got {c}, {m}, {l}"
            )));
        }
        Ok(())
    }

    /// Expected budget of one rating.
    pub fn expected_epsilon(&self) -> f64 {
        let (c, m, l) = (self.eps_conservative, self.eps_moderate, self.eps_liberal);
        self.frac_conservative * 0.5 * (c + m) + self.frac_moderate * 0.5 * (m + l) + self.frac_liberal() * l
    }

    pub fn echo(&self) -> Vec<(String, String)> {
        vec![
            ("f_c".into(), self.frac_conservative.to_string()),
            ("f_m".into(), self.frac_moderate.to_string()),
            ("f_l".into(), self.frac_liberal().to_string()),
            ("eps_c".into(), self.eps_conservative.to_string()),
            ("eps_m".into(), self.eps_moderate.to_string()),
            ("eps_l".into(), self.eps_liberal.to_string()),
            ("spec_seed".into(), self.seed.to_string()),
        ]
    }
}

/// Assigns each rating independently to a group and draws its budget.
pub fn generate_spec(data: &SparseRatings, params: &GroupSpecParams) -> Result<PrivacySpecification> {
    params.validate()?;
    let mut rng = seed::stream(&[params.seed, tag::SPEC]);
    let (c, m, l) = (params.eps_conservative, params.eps_moderate, params.eps_liberal);
    let epsilons = (0..data.len())
        .map(|_| {
            let group: f64 = rng.random();
            let level: f64 = rng.random();
            if group < params.frac_conservative {
                c + (m - c) * level
            } else if group < params.frac_conservative + params.frac_moderate {
                m + (l - m) * level
            } else {
                l
            }
        })
        .collect();
    Ok(PrivacySpecification { epsilons })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdPolicy {
    Max,
    /// Average budget over the training ratings.
    Mean,
    Fixed(f64),
}

impl std::str::FromStr for ThresholdPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(ThresholdPolicy::Max),
            "mean" => Ok(ThresholdPolicy::Mean),
            other => other
                .parse::<f64>()
                .map(ThresholdPolicy::Fixed)
                .map_err(|_| Error::InvalidParameter(format!("threshold policy `{other}` is not max, mean or a number"))),
        }
    }
}

impl std::fmt::Display for ThresholdPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ThresholdPolicy::Max => f.write_str("max"),
            ThresholdPolicy::Mean => f.write_str("mean"),
            ThresholdPolicy::Fixed(t) => write!(f, "{t}"),
        }
    }
}

pub fn resolve_threshold(spec: &PrivacySpecification, policy: ThresholdPolicy) -> Result<f64> {
    if spec.is_empty() {
        return Err(Error::InvalidData("cannot resolve a threshold for an empty specification".into()));
    }
    let (lo, hi) = (spec.min(), spec.max());
    let t = match policy {
        ThresholdPolicy::Max => hi,
        // Rounding can push the average a hair outside [lo, hi].
        ThresholdPolicy::Mean => spec.mean().clamp(lo, hi),
        ThresholdPolicy::Fixed(t) => {
            if !(t >= lo && t <= hi) {
                return Err(Error::InvalidParameter(format!(
                    "fixed threshold {t} outside the budget range [{lo}, {hi}]"
                )));
            }
            t
        }
    };
    Ok(t)
}

/// Probability of keeping a rating with budget `epsilon` at threshold `t`.
pub fn keep_probability(epsilon: f64, t: f64) -> f64 {
    if t > epsilon {
        epsilon.exp_m1() / t.exp_m1()
    } else {
        1.0
    }
}

fn check_coverage(data: &SparseRatings, spec: &PrivacySpecification) -> Result<()> {
    if spec.len() != data.len() {
        let index = spec.len().min(data.len());
        let (user, item) = data
            .entries()
            .get(index)
            .map(|e| (data.user_id(e.user), data.item_id(e.item)))
            .unwrap_or((u64::MAX, u64::MAX));
        return Err(Error::SpecCoverage { index, user, item });
    }
    Ok(())
}

/// Keeps each rating independently with probability
/// [`keep_probability`]`(eps_ij, t)`. The coin for a rating is drawn from a
/// stream keyed by `seed` and the rating's raw (user, item) ids. `t` is
/// expected to lie within the budget range; see [`resolve_threshold`].
pub fn sample_ratings(
    data: &SparseRatings,
    spec: &PrivacySpecification,
    t: f64,
    seed: u64,
) -> Result<SparseRatings> {
    check_coverage(data, spec)?;
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidParameter(format!("sampling threshold {t} must be positive")));
    }
    Ok(data.filter(|k, e| {
        let p = keep_probability(spec.epsilons[k], t);
        if p >= 1.0 {
            return true;
        }
        let coin: f64 = seed::stream(&[seed, tag::SAMPLE, data.user_id(e.user), data.item_id(e.item)]).random();
        coin < p
    }))
}

/// Result of the personalized scheme.
#[derive(Debug, Clone)]
pub struct PdpOutcome {
    pub model: FactorModel,
    pub threshold: f64,
    /// Ratings kept by the sampler.
    pub sampled: usize,
}

/// Seed of the rating sampler for a training seed.
pub fn sampling_seed(train_seed: u64) -> u64 {
    seed::derive(&[train_seed, tag::SAMPLE])
}

/// Resolves `t`, samples the training ratings, and runs the uniform `t`-DP
/// two-step trainer on the sample. Phase 1 never sees dropped ratings.
pub fn run_pdp_pmf(
    data: &SparseRatings,
    spec: &PrivacySpecification,
    policy: ThresholdPolicy,
    cfg: &TrainConfig,
    smode: SensitivityMode,
    nmode: NoiseMode,
) -> Result<PdpOutcome> {
    check_coverage(data, spec)?;
    let threshold = resolve_threshold(spec, policy)?;
    let sampled = sample_ratings(data, spec, threshold, sampling_seed(cfg.seed))?;
    let model = run_dp_pmf(&sampled, threshold, cfg, smode, nmode)?;
    Ok(PdpOutcome {
        model,
        threshold,
        sampled: sampled.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratings::{synth_lowrank, Rating, RatingRange};
    use std::io::Cursor;

    fn full_grid(n: usize, m: usize) -> SparseRatings {
        let entries = (0..n * m)
            .map(|k| Rating {
                user: (k / m) as u32,
                item: (k % m) as u32,
                value: 1.0 + (k % 5) as f64,
            })
            .collect();
        SparseRatings::new(n, m, entries, RatingRange::MOVIELENS).unwrap()
    }

    #[test]
    fn threshold_policies() {
        let spec = PrivacySpecification::new(vec![0.1, 0.2, 0.9]).unwrap();
        assert!((resolve_threshold(&spec, ThresholdPolicy::Mean).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(resolve_threshold(&spec, ThresholdPolicy::Max).unwrap(), 0.9);
        assert_eq!(resolve_threshold(&spec, ThresholdPolicy::Fixed(0.5)).unwrap(), 0.5);
        assert!(resolve_threshold(&spec, ThresholdPolicy::Fixed(0.95)).is_err());
        assert!(resolve_threshold(&spec, ThresholdPolicy::Fixed(0.05)).is_err());

        let flat = PrivacySpecification::new(vec![0.3; 7]).unwrap();
        assert_eq!(resolve_threshold(&flat, ThresholdPolicy::Mean).unwrap(), 0.3);
        assert_eq!(resolve_threshold(&flat, ThresholdPolicy::Max).unwrap(), 0.3);

        let empty = PrivacySpecification::new(vec![]).unwrap();
        assert!(resolve_threshold(&empty, ThresholdPolicy::Mean).is_err());
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("max".parse::<ThresholdPolicy>().unwrap(), ThresholdPolicy::Max);
        assert_eq!("0.7".parse::<ThresholdPolicy>().unwrap(), ThresholdPolicy::Fixed(0.7));
        assert!("avg".parse::<ThresholdPolicy>().is_err());
    }

    #[test]
    fn keep_probability_values() {
        let p = keep_probability(0.2, 0.445);
        let expected = (0.2f64.exp() - 1.0) / (0.445f64.exp() - 1.0);
        assert!((p - expected).abs() < 1e-15);
        assert!((p - 0.3950).abs() < 5e-4);
        assert_eq!(keep_probability(0.5, 0.5), 1.0);
        assert_eq!(keep_probability(0.9, 0.5), 1.0);
        assert!((keep_probability(0.5 - 1e-12, 0.5) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_group_parameters() {
        let data = full_grid(40, 25);
        let all_c = generate_spec(&data, &GroupSpecParams { frac_conservative: 1.0, frac_moderate: 0.0, ..Default::default() })
            .unwrap();
        assert!(all_c.epsilons().iter().all(|e| (0.1..0.2).contains(e)));
        let all_l = generate_spec(&data, &GroupSpecParams { frac_conservative: 0.0, frac_moderate: 0.0, ..Default::default() })
            .unwrap();
        assert!(all_l.epsilons().iter().all(|e| *e == DEFAULT_EPSILON));
    }

    #[test]
    fn invalid_group_parameters() {
        let data = full_grid(2, 2);
        for p in [
            GroupSpecParams { frac_conservative: 0.7, frac_moderate: 0.4, ..Default::default() },
            GroupSpecParams { frac_conservative: -0.1, ..Default::default() },
            GroupSpecParams { eps_moderate: 0.05, ..Default::default() },
            GroupSpecParams { eps_liberal: 0.2, ..Default::default() },
        ] {
            assert!(generate_spec(&data, &p).is_err(), "{p:?}");
        }
    }

    #[test]
    fn expected_epsilon_of_defaults() {
        assert!((GroupSpecParams::default().expected_epsilon() - 0.393).abs() < 1e-12);
    }

    #[test]
    fn sampling_requires_full_coverage() {
        let data = full_grid(3, 3);
        let short = PrivacySpecification::new(vec![0.5; 8]).unwrap();
        assert!(matches!(sample_ratings(&data, &short, 0.5, 1), Err(Error::SpecCoverage { index: 8, .. })));
    }

    #[test]
    fn sample_is_a_subset_with_unchanged_values() {
        let data = full_grid(30, 20);
        let spec = generate_spec(&data, &GroupSpecParams::default()).unwrap();
        let t = resolve_threshold(&spec, ThresholdPolicy::Mean).unwrap();
        let sampled = sample_ratings(&data, &spec, t, 4).unwrap();
        assert!(sampled.len() < data.len());
        let original: HashMap<(u32, u32), f64> = data.entries().iter().map(|e| ((e.user, e.item), e.value)).collect();
        for e in sampled.entries() {
            assert_eq!(original[&(e.user, e.item)], e.value);
        }
        assert_eq!(sampled, sample_ratings(&data, &spec, t, 4).unwrap());
    }

    #[test]
    fn spec_csv_round_trip_and_coverage() {
        let s = synth_lowrank(10, 8, 2, 0.5, 1).unwrap();
        let spec = generate_spec(&s.ratings, &GroupSpecParams::default()).unwrap();
        let mut buf = Vec::new();
        spec.write_csv(&s.ratings, &mut buf).unwrap();
        let table = SpecTable::read_csv(Cursor::new(&buf)).unwrap();
        assert_eq!(table.len(), s.ratings.len());
        assert_eq!(table.align(&s.ratings).unwrap(), spec);

        let bigger = synth_lowrank(10, 8, 2, 0.9, 1).unwrap();
        assert!(matches!(table.align(&bigger.ratings), Err(Error::SpecCoverage { .. })));
        assert!(SpecTable::read_csv(Cursor::new("user,item,epsilon\n1,2,0\n")).is_err());
        assert!(SpecTable::read_csv(Cursor::new("1,2,0.5\n1,2,0.4\n")).is_err());
    }

    #[test]
    fn all_liberal_spec_keeps_everything() {
        let s = synth_lowrank(12, 10, 2, 0.6, 5).unwrap();
        let spec = PrivacySpecification::uniform_default(&s.ratings);
        let cfg = TrainConfig {
            dim: 2,
            learning_rate: 0.05,
            grad_normalization: false,
            phase1_iters: 20,
            phase2_iters: 20,
            ..TrainConfig::default()
        };
        let out = run_pdp_pmf(&s.ratings, &spec, ThresholdPolicy::Mean, &cfg, SensitivityMode::AddRemove, NoiseMode::FixedObjective)
            .unwrap();
        assert_eq!(out.threshold, 1.0);
        assert_eq!(out.sampled, s.ratings.len());
        let dp = run_dp_pmf(&s.ratings, 1.0, &cfg, SensitivityMode::AddRemove, NoiseMode::FixedObjective).unwrap();
        assert_eq!(out.model, dp);
    }
}

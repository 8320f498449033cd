//! Experiment grids: sweep values x series x replications, each cell a full
//! k-fold cross-validation.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use pdpmf::eval::{crossval_run, mean_std, EvalReport, Mode, RunConfig};
use pdpmf::pdp::{GroupSpecParams, ThresholdPolicy};
use pdpmf::pmf::TrainConfig;
use pdpmf::ratings::{parse_movielens, synth_lowrank, DatasetFormat, SparseRatings, Synthetic};
use pdpmf::seed;
use rayon::prelude::*;

use crate::settings::Settings;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    None,
    FracConservative,
    EpsModerate,
    Threshold,
    Epsilon,
}

impl FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Sweep::None),
            "f_c" => Ok(Sweep::FracConservative),
            "eps_m" => Ok(Sweep::EpsModerate),
            "t" => Ok(Sweep::Threshold),
            "epsilon" => Ok(Sweep::Epsilon),
            other => Err(format!("unknown sweep variable `{other}` (none, f_c, eps_m, t, epsilon)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthShape {
    pub users: usize,
    pub items: usize,
    pub dim: usize,
    pub density: f64,
}

/// Typed view of a [`Settings`].
#[derive(Debug, Clone)]
pub struct Resolved {
    pub dataset: String,
    pub format: Option<DatasetFormat>,
    pub seed: u64,
    pub seeds: usize,
    pub run: RunConfig,
    pub groups: GroupSpecParams,
    pub policy: ThresholdPolicy,
    pub sweep: Sweep,
    pub values: Vec<f64>,
    pub series_f_c: Vec<f64>,
    pub dp_baseline: Option<f64>,
    pub plain_baseline: bool,
    pub cdf: bool,
    pub synth: SynthShape,
}

pub fn resolve(s: &Settings) -> Result<Resolved> {
    let format = match s.raw("format") {
        "auto" => None,
        _ => Some(s.get("format")?),
    };
    let train = TrainConfig {
        dim: s.get("d")?,
        learning_rate: s.get("gamma")?,
        lambda_u: s.get("lambda_u")?,
        lambda_v: s.get("lambda_v")?,
        phase1_iters: s.get("k1")?,
        phase2_iters: s.get("k2")?,
        seed: 0,
        grad_normalization: s.get("grad_normalization")?,
        project_each_sweep: s.get("project_each_sweep")?,
        unit_ball: s.get("unit_ball")?,
    };
    train.validate()?;
    let groups = GroupSpecParams {
        frac_conservative: s.get("f_c")?,
        frac_moderate: s.get("f_m")?,
        eps_conservative: s.get("eps_c")?,
        eps_moderate: s.get("eps_m")?,
        eps_liberal: s.get("eps_l")?,
        seed: s.get("spec_seed")?,
    };
    let seeds: usize = s.get("seeds")?;
    if seeds == 0 {
        bail!("`seeds` must be at least 1");
    }
    let resolved = Resolved {
        dataset: s.raw("dataset").to_string(),
        format,
        seed: s.get("seed")?,
        seeds,
        run: RunConfig {
            train,
            sensitivity: s.get("sensitivity")?,
            noise: s.get("noise_mode")?,
            folds: s.get("folds")?,
        },
        groups,
        policy: s.get("threshold")?,
        sweep: s.get("sweep")?,
        values: s.list("values")?,
        series_f_c: s.list("series_f_c")?,
        dp_baseline: s.optional("dp_baseline")?,
        plain_baseline: s.get("plain_baseline")?,
        cdf: s.get("cdf")?,
        synth: SynthShape {
            users: s.get("synth_users")?,
            items: s.get("synth_items")?,
            dim: s.get("synth_dim")?,
            density: s.get("synth_density")?,
        },
    };
    if resolved.run.folds < 2 {
        bail!("`folds` must be at least 2");
    }
    Ok(resolved)
}

/// The generated instance behind `dataset = synth`.
pub fn load_synthetic(r: &Resolved) -> Result<Synthetic> {
    let SynthShape { users, items, dim, density } = r.synth;
    Ok(synth_lowrank(users, items, dim, density, r.seed)?)
}

pub fn load_dataset(r: &Resolved) -> Result<SparseRatings> {
    match r.dataset.as_str() {
        "" => bail!("no dataset given; pass --dataset <path> or --dataset synth"),
        "synth" => Ok(load_synthetic(r)?.ratings),
        path => {
            let path = Path::new(path);
            let format = r.format.unwrap_or_else(|| DatasetFormat::infer(path));
            parse_movielens(path, format).with_context(|| format!("loading {}", path.display()))
        }
    }
}

/// One cross-validated run.
#[derive(Debug, Clone)]
pub struct Cell {
    pub label: String,
    /// `None` for baselines, which do not depend on the sweep.
    pub sweep_value: Option<f64>,
    pub replication: usize,
    pub mode: Mode,
}

impl Cell {
    fn stem(&self) -> String {
        let value = self.sweep_value.map(|v| v.to_string()).unwrap_or_else(|| "base".into());
        format!("{}_v{value}_rep{}", slug(&self.label), self.replication)
    }
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

/// Seed for the cross-validation of replication `rep`. Sweep values and
/// modes deliberately share it, so every cell of a replication sees the same
/// folds, initialization and per-rating random draws.
pub fn replication_seed(master: u64, rep: usize) -> u64 {
    seed::derive(&[master, rep as u64])
}

fn pdp_mode(r: &Resolved, f_c: Option<f64>, value: Option<f64>) -> Result<Mode> {
    let mut groups = r.groups;
    let mut policy = r.policy;
    if let Some(f) = f_c {
        groups.frac_conservative = f;
    }
    if let Some(v) = value {
        match r.sweep {
            Sweep::FracConservative => groups.frac_conservative = v,
            Sweep::EpsModerate => groups.eps_moderate = v,
            Sweep::Threshold => {
                if !(v.is_finite() && v > 0.0) {
                    bail!("sampling threshold {v} must be positive");
                }
                policy = ThresholdPolicy::Fixed(v);
            }
            Sweep::None | Sweep::Epsilon => unreachable!(),
        }
    }
    groups.validate()?;
    Ok(Mode::Pdp { groups, policy })
}

/// Cells in output order: sweep values, then series, then baselines, each
/// repeated for every replication.
pub fn build_cells(r: &Resolved) -> Result<Vec<Cell>> {
    let values: Vec<Option<f64>> = match r.sweep {
        Sweep::None => {
            if !r.values.is_empty() {
                bail!("`values` given without a sweep variable");
            }
            vec![None]
        }
        _ if r.values.is_empty() => bail!("sweep needs at least one value"),
        _ => r.values.iter().copied().map(Some).collect(),
    };
    if !r.series_f_c.is_empty() && matches!(r.sweep, Sweep::FracConservative | Sweep::Epsilon) {
        bail!("`series_f_c` cannot be combined with this sweep");
    }
    let mut modes: Vec<(String, Option<f64>, Mode)> = Vec::new();
    for value in &values {
        if r.sweep == Sweep::Epsilon {
            let epsilon = value.expect("epsilon sweep has values");
            if !(epsilon.is_finite() && epsilon > 0.0) {
                bail!("epsilon {epsilon} must be positive");
            }
            modes.push(("dp-pmf".into(), *value, Mode::Dp { epsilon }));
            continue;
        }
        if r.series_f_c.is_empty() {
            modes.push(("pdp-pmf".into(), *value, pdp_mode(r, None, *value)?));
        }
        for f in &r.series_f_c {
            modes.push((format!("pdp-pmf[f_c={f}]"), *value, pdp_mode(r, Some(*f), *value)?));
        }
    }
    if let Some(epsilon) = r.dp_baseline {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            bail!("dp_baseline {epsilon} must be positive");
        }
        modes.push((format!("dp-pmf[eps={epsilon}]"), None, Mode::Dp { epsilon }));
    }
    if r.plain_baseline {
        modes.push(("pmf".into(), None, Mode::Plain));
    }
    Ok(modes
        .into_iter()
        .flat_map(|(label, sweep_value, mode)| {
            (0..r.seeds).map(move |replication| Cell {
                label: label.clone(),
                sweep_value,
                replication,
                mode,
            })
        })
        .collect())
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut out = BufWriter::new(File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?);
    fill(&mut out)?;
    out.flush()?;
    drop(out);
    fs::rename(&tmp, path).with_context(|| format!("renaming {} to {}", tmp.display(), path.display()))?;
    Ok(())
}

fn write_echo<W: Write>(out: &mut W, echo: &[(String, String)]) -> Result<()> {
    for (k, v) in echo {
        writeln!(out, "# {k}={v}")?;
    }
    Ok(())
}

fn fmt_value(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn run_cell(data: &SparseRatings, r: &Resolved, cell: &Cell, echo: &[(String, String)], cells_dir: &Path) -> Result<EvalReport> {
    let mut report = crossval_run(data, &cell.mode, &r.run, replication_seed(r.seed, cell.replication))?;
    let mut config = echo.to_vec();
    config.push(("cell".into(), cell.label.clone()));
    config.push(("sweep_value".into(), fmt_value(cell.sweep_value)));
    config.push(("replication".into(), cell.replication.to_string()));
    config.append(&mut report.config);
    report.config = config;
    let stem = cell.stem();
    write_atomic(&cells_dir.join(format!("{stem}.csv")), |w| Ok(report.write_csv(w)?))?;
    write_atomic(&cells_dir.join(format!("{stem}.folds.csv")), |w| Ok(report.write_folds_csv(w)?))?;
    Ok(report)
}

/// Aggregate over replications of one (label, sweep value) pair.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub sweep_value: Option<f64>,
    pub label: String,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub thresholds: Vec<f64>,
    pub cdf: Vec<f64>,
}

pub fn summarize(cells: &[Cell], reports: &[Option<EvalReport>]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = Vec::new();
    let mut seen: Vec<(String, Option<u64>)> = Vec::new();
    for cell in cells {
        let key = (cell.label.clone(), cell.sweep_value.map(f64::to_bits));
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        let group: Vec<&EvalReport> = cells
            .iter()
            .zip(reports)
            .filter(|(c, _)| c.label == cell.label && c.sweep_value.map(f64::to_bits) == cell.sweep_value.map(f64::to_bits))
            .filter_map(|(_, rep)| rep.as_ref())
            .collect();
        if group.is_empty() {
            continue;
        }
        let rmses: Vec<f64> = group.iter().map(|g| g.rmse).collect();
        let (mean_rmse, std_rmse) = mean_std(&rmses);
        let thresholds = group[0].thresholds.clone();
        let cdf = (0..thresholds.len())
            .map(|k| group.iter().map(|g| g.cdf[k]).sum::<f64>() / group.len() as f64)
            .collect();
        rows.push(SummaryRow {
            sweep_value: cell.sweep_value,
            label: cell.label.clone(),
            mean_rmse,
            std_rmse,
            thresholds,
            cdf,
        });
    }
    rows
}

/// Outcome of [`run_plan`].
#[derive(Debug)]
pub struct PlanOutcome {
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<(String, anyhow::Error)>,
}

/// Runs every cell and writes `cells/`, `summary.csv`, the raw-id map
/// `ids.csv` and, for CDF plans, one `cdf-<mode>.csv` per mode. Cells that fail are reported in the
/// outcome; the files of the others are still written.
pub fn run_plan(settings: &Settings, out_dir: &Path, jobs: usize) -> Result<PlanOutcome> {
    let r = resolve(settings)?;
    let cells = build_cells(&r)?;
    let data = load_dataset(&r)?;
    let cells_dir = out_dir.join("cells");
    fs::create_dir_all(&cells_dir).with_context(|| format!("creating {}", cells_dir.display()))?;
    let echo = settings.echo();
    write_atomic(&out_dir.join("ids.csv"), |w| Ok(data.write_id_map(w)?))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| anyhow!("thread pool: {e}"))?;
    let results: Vec<Result<EvalReport>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let res = run_cell(&data, &r, cell, &echo, &cells_dir);
                match &res {
                    Ok(rep) => eprintln!(
                        "{} value={} rep={}: rmse {:.4}",
                        cell.label,
                        fmt_value(cell.sweep_value),
                        cell.replication,
                        rep.rmse
                    ),
                    Err(e) => eprintln!("{} value={} rep={}: FAILED: {e:#}", cell.label, fmt_value(cell.sweep_value), cell.replication),
                }
                res
            })
            .collect()
    });

    let mut failures = Vec::new();
    let mut reports = Vec::with_capacity(results.len());
    for (cell, res) in cells.iter().zip(results) {
        match res {
            Ok(rep) => reports.push(Some(rep)),
            Err(e) => {
                failures.push((cell.stem(), e));
                reports.push(None);
            }
        }
    }
    let rows = summarize(&cells, &reports);

    write_atomic(&out_dir.join("summary.csv"), |w| {
        write_echo(w, &echo)?;
        writeln!(w, "sweep_value,mode,mean_rmse,std_rmse")?;
        for row in &rows {
            writeln!(w, "{},{},{},{}", fmt_value(row.sweep_value), row.label, row.mean_rmse, row.std_rmse)?;
        }
        Ok(())
    })?;
    if r.cdf {
        let mut labels: Vec<&str> = Vec::new();
        for row in &rows {
            if !labels.contains(&row.label.as_str()) {
                labels.push(&row.label);
            }
        }
        for label in labels {
            write_atomic(&out_dir.join(format!("cdf-{}.csv", slug(label))), |w| {
                write_echo(w, &echo)?;
                writeln!(w, "# mode={label}")?;
                writeln!(w, "sweep_value,threshold,fraction")?;
                for row in rows.iter().filter(|row| row.label == label) {
                    for (x, f) in row.thresholds.iter().zip(&row.cdf) {
                        writeln!(w, "{},{x},{f}", fmt_value(row.sweep_value))?;
                    }
                }
                Ok(())
            })?;
        }
    }
    Ok(PlanOutcome { rows, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolved(assignments: &[&str]) -> Result<Resolved> {
        let mut s = Settings::default();
        for a in assignments {
            s.apply_assignment(a)?;
        }
        resolve(&s)
    }

    #[test]
    fn fig4_grid_shape() {
        let mut s = Settings::default();
        s.apply_preset("fig4").unwrap();
        s.apply_assignment("seeds=2").unwrap();
        let cells = build_cells(&resolve(&s).unwrap()).unwrap();
        // 7 values x 3 series x 2 reps, plus the baseline twice.
        assert_eq!(cells.len(), 7 * 3 * 2 + 2);
        let Mode::Pdp { groups, .. } = cells[0].mode else { panic!("expected pdp") };
        assert_eq!(groups.eps_moderate, 0.2);
        assert_eq!(groups.frac_conservative, 0.54);
        assert_eq!(cells.last().unwrap().label, "dp-pmf[eps=0.1]");
    }

    #[test]
    fn threshold_sweep_sets_fixed_policy() {
        let r = resolved(&["sweep=t", "values=0.7"]).unwrap();
        let cells = build_cells(&r).unwrap();
        assert!(matches!(cells[0].mode, Mode::Pdp { policy: ThresholdPolicy::Fixed(t), .. } if t == 0.7));
    }

    #[test]
    fn invalid_plans_are_rejected() {
        assert!(build_cells(&resolved(&["sweep=f_c", "values=0.7"]).unwrap()).is_err());
        assert!(build_cells(&resolved(&["sweep=eps_m", "values=1.5"]).unwrap()).is_err());
        assert!(build_cells(&resolved(&["sweep=f_c"]).unwrap()).is_err());
        assert!(build_cells(&resolved(&["values=0.1"]).unwrap()).is_err());
        assert!(resolved(&["folds=1"]).is_err());
        assert!(resolved(&["seeds=0"]).is_err());
        assert!(resolved(&["sweep=x"]).is_err());
    }

    #[test]
    fn slugs_are_file_safe() {
        assert_eq!(slug("pdp-pmf[f_c=0.54]"), "pdp-pmf_f_c_0.54");
        assert_eq!(slug("dp-pmf[eps=0.1]"), "dp-pmf_eps_0.1");
    }
}

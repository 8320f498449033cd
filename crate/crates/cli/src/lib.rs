//! `pdpmf` command-line front end.

pub mod experiment;
pub mod settings;

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pdpmf::dp::run_dp_pmf;
use pdpmf::model::{FactorModel, Release};
use pdpmf::pdp::{generate_spec, run_pdp_pmf, PrivacySpecification, SpecTable};
use pdpmf::pmf::train_pmf;

use crate::experiment::{load_dataset, load_synthetic, resolve, run_plan, write_atomic};
use crate::settings::Settings;

/// Environment variable naming the default output directory of `run`.
pub const OUT_DIR_ENV: &str = "PDPMF_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "pdpmf", version, about = "Matrix factorization recommenders with personalized differential privacy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment grid and write per-cell reports plus summaries.
    Run(RunArgs),
    /// Train one model on the whole dataset and write it to a model file.
    Train(TrainArgs),
    /// Export the publishable profiles of a model file.
    Export(ExportArgs),
    /// Generate a privacy specification for a dataset.
    SpecGen(SpecGenArgs),
}

/// Options shared by every command that reads a dataset. Each one maps onto a
/// configuration key and overrides the preset and the config file.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ratings file, or `synth` for a generated low-rank instance.
    #[arg(long)]
    pub dataset: Option<String>,
    /// `tab` (u.data) or `colon` (ratings.dat); inferred from the extension by default.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub k1: Option<usize>,
    #[arg(long)]
    pub k2: Option<usize>,
    /// `add-remove` or `modify`.
    #[arg(long)]
    pub sensitivity: Option<String>,
    #[arg(long = "f-c")]
    pub f_c: Option<f64>,
    #[arg(long = "f-m")]
    pub f_m: Option<f64>,
    #[arg(long = "eps-c")]
    pub eps_c: Option<f64>,
    #[arg(long = "eps-m")]
    pub eps_m: Option<f64>,
    #[arg(long = "eps-l")]
    pub eps_l: Option<f64>,
    /// `mean`, `max` or a fixed value.
    #[arg(long)]
    pub threshold: Option<String>,
    /// Any configuration key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl CommonArgs {
    /// Preset, then file, then flags.
    pub fn settings(&self, preset: Option<&str>) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(p) = preset {
            s.apply_preset(p)?;
        }
        if let Some(path) = &self.config {
            s.apply_file(path)?;
        }
        let flags: [(&str, Option<String>); 14] = [
            ("dataset", self.dataset.clone()),
            ("format", self.format.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
            ("d", self.dim.map(|v| v.to_string())),
            ("gamma", self.gamma.map(|v| v.to_string())),
            ("k1", self.k1.map(|v| v.to_string())),
            ("k2", self.k2.map(|v| v.to_string())),
            ("sensitivity", self.sensitivity.clone()),
            ("f_c", self.f_c.map(|v| v.to_string())),
            ("f_m", self.f_m.map(|v| v.to_string())),
            ("eps_c", self.eps_c.map(|v| v.to_string())),
            ("eps_m", self.eps_m.map(|v| v.to_string())),
            ("eps_l", self.eps_l.map(|v| v.to_string())),
            ("threshold", self.threshold.clone()),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                s.set(key, v)?;
            }
        }
        for a in &self.set {
            s.apply_assignment(a)?;
        }
        Ok(s)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// One of fig2, fig3, fig4, fig5.
    #[arg(long)]
    pub preset: Option<String>,
    /// Output directory; defaults to $PDPMF_OUT_DIR, then `results`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replications per grid point.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Grid cells run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Swept variable: f_c, eps_m, t or epsilon.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Comma-separated sweep values.
    #[arg(long)]
    pub values: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainMode {
    Plain,
    Dp,
    Pdp,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub mode: TrainMode,
    /// Uniform budget for `--mode dp`.
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    /// `user,item,epsilon` file for `--mode pdp`; generated from the group
    /// parameters when absent.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Model file written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Directory receiving `items.csv` and, for non-private models, `users.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Also export user profiles. Refused for private models.
    #[arg(long)]
    pub include_user_profiles: bool,
}

#[derive(Debug, Args)]
pub struct SpecGenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Specification file to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Train(args) => cmd_train(args),
        Command::Export(args) => cmd_export(args),
        Command::SpecGen(args) => cmd_spec_gen(args),
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut s = args.common.settings(args.preset.as_deref())?;
    for (key, value) in [
        ("seeds", args.seeds.map(|v| v.to_string())),
        ("folds", args.folds.map(|v| v.to_string())),
        ("sweep", args.sweep),
        ("values", args.values),
    ] {
        if let Some(v) = value {
            s.set(key, v)?;
        }
    }
    // --set comes last so it wins over the dedicated flags too.
    for a in &args.common.set {
        s.apply_assignment(a)?;
    }
    let out = args
        .out
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));
    let outcome = run_plan(&s, &out, args.jobs)?;
    eprintln!("wrote {}", out.join("summary.csv").display());
    if !outcome.failures.is_empty() {
        for (cell, e) in &outcome.failures {
            eprintln!("cell {cell} failed: {e:#}");
        }
        bail!("{} cell(s) failed; results of the others are in {}", outcome.failures.len(), out.display());
    }
    Ok(())
}

fn spec_for(s: &Settings, data: &pdpmf::SparseRatings, file: Option<&Path>) -> Result<PrivacySpecification> {
    match file {
        Some(path) => {
            let table = SpecTable::read_csv(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))?;
            Ok(table.align(data)?)
        }
        None => Ok(generate_spec(data, &resolve(s)?.groups)?),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let s = args.common.settings(None)?;
    let r = resolve(&s)?;
    let data = load_dataset(&r)?;
    let cfg = pdpmf::TrainConfig { seed: r.seed, ..r.run.train };
    let mut echo = s.echo();
    let model: FactorModel = match args.mode {
        TrainMode::Plain => train_pmf(&data, &cfg)?,
        TrainMode::Dp => {
            echo.push(("epsilon".into(), args.epsilon.to_string()));
            run_dp_pmf(&data, args.epsilon, &cfg, r.run.sensitivity, r.run.noise)?
        }
        TrainMode::Pdp => {
            let spec = spec_for(&s, &data, args.spec.as_deref())?;
            let out = run_pdp_pmf(&data, &spec, r.policy, &cfg, r.run.sensitivity, r.run.noise)?;
            echo.push(("threshold_policy".into(), r.policy.to_string()));
            echo.push(("threshold".into(), out.threshold.to_string()));
            echo.push(("sampled".into(), out.sampled.to_string()));
            out.model
        }
    };
    echo.push(("mode".into(), format!("{:?}", args.mode).to_lowercase()));
    write_atomic(&args.out, |w| Ok(model.write_csv(w, &echo)?))?;
    write_atomic(&sibling(&args.out, "ids.csv"), |w| Ok(data.write_id_map(w)?))?;
    if r.dataset == "synth" {
        let synth = load_synthetic(&r)?;
        let affine = [
            ("rating".to_string(), "scale * dot(u, v) + offset".to_string()),
            ("scale".to_string(), synth.scale.to_string()),
            ("offset".to_string(), synth.offset.to_string()),
        ];
        write_atomic(&sibling(&args.out, "truth.csv"), |w| Ok(synth.truth.write_csv(w, &affine)?))?;
    }
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

/// `model.csv` -> `model.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let model = FactorModel::read_csv(BufReader::new(
        File::open(&args.model).with_context(|| format!("opening {}", args.model.display()))?,
    ))
    .with_context(|| format!("reading {}", args.model.display()))?;
    let private = model.release() == Release::ItemsOnly;
    if private && args.include_user_profiles {
        bail!(
            "refusing to export user profiles: {} is a private model, and only its item profiles may be published",
            args.model.display()
        );
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let echo = vec![("source".to_string(), args.model.display().to_string())];
    write_atomic(&args.out.join("items.csv"), |w| Ok(model.write_items_csv(w, &echo)?))?;
    if !private {
        write_atomic(&args.out.join("users.csv"), |w| Ok(model.write_users_csv(w, &echo)?))?;
    }
    Ok(())
}

fn cmd_spec_gen(args: SpecGenArgs) -> Result<()> {
    let s = args.common.settings(None)?;
    let r = resolve(&s)?;
    let data = load_dataset(&r)?;
    let spec = generate_spec(&data, &r.groups)?;
    write_atomic(&args.out, |w| Ok(spec.write_csv(&data, w)?))?;
    eprintln!(
        "wrote {} budgets (mean {:.4}, min {:.4}, max {:.4}) to {}",
        spec.len(),
        spec.mean(),
        spec.min(),
        spec.max(),
        args.out.display()
    );
    Ok(())
}

//! Flat `key = value` configuration with three layers: preset, file, command line.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// Every recognised key with its built-in default.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("dataset", ""),
    ("format", "auto"),
    ("seed", "42"),
    ("seeds", "5"),
    ("folds", "10"),
    ("d", "20"),
    ("gamma", "50"),
    ("lambda_u", "0.01"),
    ("lambda_v", "0.01"),
    ("k1", "50"),
    ("k2", "50"),
    ("grad_normalization", "true"),
    ("project_each_sweep", "false"),
    ("unit_ball", "rescale"),
    ("sensitivity", "add-remove"),
    ("noise_mode", "fixed"),
    ("f_c", "0.54"),
    ("f_m", "0.37"),
    ("eps_c", "0.1"),
    ("eps_m", "0.2"),
    ("eps_l", "1.0"),
    ("threshold", "mean"),
    ("spec_seed", "0"),
    ("sweep", "none"),
    ("values", ""),
    ("series_f_c", ""),
    ("dp_baseline", "none"),
    ("plain_baseline", "false"),
    ("cdf", "false"),
    ("synth_users", "200"),
    ("synth_items", "150"),
    ("synth_dim", "5"),
    ("synth_density", "0.1"),
];

pub const PRESETS: &[&str] = &["fig2", "fig3", "fig4", "fig5"];

pub fn preset(name: &str) -> Result<Vec<(&'static str, &'static str)>> {
    let pairs: &[(&str, &str)] = match name {
        "fig2" => &[
            ("sweep", "f_c"),
            ("values", "0.1,0.2,0.3,0.4,0.5,0.6"),
            ("dp_baseline", "0.1"),
        ],
        "fig3" => &[
            ("sweep", "f_c"),
            ("values", "0.54,0.37,0.2"),
            ("dp_baseline", "0.1"),
            ("cdf", "true"),
        ],
        "fig4" => &[
            ("sweep", "eps_m"),
            ("values", "0.2,0.3,0.4,0.5,0.6,0.7,0.8"),
            ("series_f_c", "0.54,0.37,0.2"),
            ("dp_baseline", "0.1"),
        ],
        "fig5" => &[
            ("sweep", "t"),
            ("values", "0.6,0.7,0.8,1.0"),
            ("f_c", "0.6"),
            ("f_m", "0.35"),
            ("eps_m", "0.4"),
            ("cdf", "true"),
        ],
        other => bail!("unknown preset `{other}`; expected one of {}", PRESETS.join(", ")),
    };
    Ok(pairs.to_vec())
}

#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        let key = key.trim().replace('-', "_");
        match self.values.get_mut(&key) {
            Some(slot) => {
                *slot = value.into().trim().to_string();
                Ok(())
            }
            None => bail!("unknown configuration key `{key}`"),
        }
    }

    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        for (k, v) in preset(name)? {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{source}:{}: expected `key = value`", n + 1))?;
            self.set(k, v).with_context(|| format!("{source}:{}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies a `key=value` override.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| anyhow!("`{assignment}` is not of the form key=value"))?;
        self.set(k, v)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("configuration key `{key}` has no default"))
    }

    pub fn get<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| anyhow!("invalid value `{raw}` for `{key}`: {e}"))
    }

    /// Comma-separated list; empty means none.
    pub fn list(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| s.trim().parse().map_err(|e| anyhow!("invalid entry `{s}` in `{key}`: {e}")))
            .collect()
    }

    /// `none` or a number.
    pub fn optional(&self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            "none" | "" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    pub fn echo(&self) -> Vec<(String, String)> {
        self.values.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }
}

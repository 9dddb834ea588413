//! Resolved run configuration.
//!
//! The text format is one `section.key = value` per line with `#` comments.
//! Values are JSON literals where that parses (`0.5`, `true`, `[100, 500]`,
//! `null`), `none` for an absent optional, `lo..hi` for two-element ranges,
//! `a,b,c` for lists, and bare strings otherwise. Layers apply in order:
//! defaults, config file, environment, command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::knowledge::AssetPaths;
use crate::model::{Ablation, Hyperparams};
use crate::synthgen::GeneratorSpec;
use crate::training::TrainConfig;

/// Environment variable naming the asset directory.
pub const ASSETS_ENV: &str = "RXFEW_ASSETS";

/// Name of the snapshot every command writes into its output directory.
pub const SNAPSHOT_FILE: &str = "config.resolved";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetSection {
    /// Directory holding the four asset files and `records.txt`.
    pub dir: PathBuf,
    pub records: Option<PathBuf>,
    pub fallback_seed: u64,
}

impl Default for AssetSection {
    fn default() -> Self {
        AssetSection {
            dir: PathBuf::from("data"),
            records: None,
            fallback_seed: 0,
        }
    }
}

impl AssetSection {
    pub fn paths(&self) -> AssetPaths {
        AssetPaths::in_dir(&self.dir)
    }

    pub fn records_path(&self) -> PathBuf {
        self.records
            .clone()
            .unwrap_or_else(|| self.dir.join(crate::synthgen::RECORDS_FILE))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train_until: i32,
    pub valid_until: i32,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            train_until: 2015,
            valid_until: 2017,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub ks: Vec<usize>,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = EvalConfig::default();
        EvalSection {
            episodes: d.episodes,
            n_pos: d.n_pos,
            n_neg: d.n_neg,
            ks: d.ks,
            seed: 0,
        }
    }
}

impl EvalSection {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            episodes: self.episodes,
            n_pos: self.n_pos,
            n_neg: self.n_neg,
            ks: self.ks.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub out: PathBuf,
    /// Worker threads; 0 lets the thread pool decide.
    pub workers: usize,
    pub log_every: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            out: PathBuf::from("runs"),
            workers: 0,
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub assets: AssetSection,
    pub model: Hyperparams,
    pub train: TrainConfig,
    pub split: SplitSection,
    pub eval: EvalSection,
    pub ablation: Ablation,
    pub gen: GeneratorSpec,
    pub run: RunSection,
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        _ => out.push((prefix.to_string(), v.clone())),
    }
}

fn parse_value(raw: &str, current: &Value) -> Value {
    let raw = raw.trim();
    if raw.eq_ignore_ascii_case("none") {
        return Value::Null;
    }
    if let Value::String(_) = current {
        return Value::String(raw.to_string());
    }
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        if !matches!((&v, current), (Value::Number(_), Value::Array(_))) {
            return v;
        }
    }
    if let Value::Array(_) = current {
        if let Some((lo, hi)) = raw.split_once("..") {
            let lo = serde_json::from_str(lo.trim()).unwrap_or(Value::String(lo.trim().into()));
            let hi = serde_json::from_str(hi.trim()).unwrap_or(Value::String(hi.trim().into()));
            return Value::Array(vec![lo, hi]);
        }
        return Value::Array(
            raw.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| serde_json::from_str(s.trim()).unwrap_or(Value::String(s.trim().into())))
                .collect(),
        );
    }
    Value::String(raw.to_string())
}

fn render_value(v: &Value) -> String {
    match v {
        Value::Null => "none".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl RunConfig {
    fn to_tree(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Sets one dotted key from its text form.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut tree = self.to_tree();
        let mut node = &mut tree;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj: &mut Map<String, Value> = node
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
            let child = obj
                .get_mut(*part)
                .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
            if i + 1 == parts.len() {
                if child.is_object() {
                    return Err(Error::Config(format!("`{key}` is a section, not a key")));
                }
                *child = parse_value(raw, child);
            }
            node = child;
        }
        *self = serde_json::from_value(tree).map_err(|e| Error::Config(format!("`{key} = {raw}`: {e}")))?;
        Ok(())
    }

    /// Applies `section.key = value` lines.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected `key = value`", origin.display(), n + 1))
            })?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", origin.display(), n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, path)
    }

    /// Reads [`ASSETS_ENV`] through `lookup` so tests need not touch the
    /// process environment.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(dir) = lookup(ASSETS_ENV).filter(|s| !s.is_empty()) {
            self.assets.dir = PathBuf::from(dir);
        }
    }

    /// Defaults, then `file`, then the environment, then `overrides` in order.
    pub fn resolve(
        file: Option<&Path>,
        env: impl Fn(&str) -> Option<String>,
        overrides: &[(String, String)],
    ) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(f) = file {
            cfg.apply_file(f)?;
        }
        cfg.apply_env(env);
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// One sorted `key = value` line per leaf.
    pub fn to_text(&self) -> String {
        let mut entries = Vec::new();
        flatten("", &self.to_tree(), &mut entries);
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        entries
            .iter()
            .map(|(k, v)| format!("{k} = {}\n", render_value(v)))
            .collect()
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(SNAPSHOT_FILE);
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.split.train_until > self.split.valid_until {
            return Err(Error::Config("split.train_until must not exceed split.valid_until".into()));
        }
        if self.eval.ks.iter().any(|&k| k == 0) {
            return Err(Error::Config("eval.ks entries must be positive".into()));
        }
        if self.eval.n_pos == 0 || self.eval.n_neg == 0 {
            return Err(Error::Config("eval.n_pos and eval.n_neg must be positive".into()));
        }
        Ok(())
    }

    /// The model's phenotype count must agree with the loaded phenotype map.
    pub fn check_phenotypes(&self, declared: usize) -> Result<()> {
        if self.model.n_phenotypes != declared {
            return Err(Error::Config(format!(
                "model.n_phenotypes = {} but the phenotype map declares {declared}",
                self.model.n_phenotypes
            )));
        }
        Ok(())
    }
}

//! Run configuration: one TOML file plus command-line overrides.
//!
//! Relative paths are resolved against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use mcnn::layers::Variant;
use mcnn::model::McnnConfig;
use mcnn::train::{HyperGrid, TrainSettings};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    seed: u64,
    #[serde(default = "one")]
    jobs: usize,
    #[serde(default)]
    verbosity: Option<String>,
    data: DataSection,
    #[serde(default)]
    model: Option<toml::Table>,
    #[serde(default)]
    grid: Option<GridSection>,
    #[serde(default)]
    folds: FoldSection,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    baseline: BaselineSection,
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    dataset: PathBuf,
    output: PathBuf,
    #[serde(default)]
    schema: Option<PathBuf>,
    #[serde(default)]
    validation: Option<PathBuf>,
    #[serde(default = "default_validation_fraction")]
    validation_fraction: f64,
    #[serde(default)]
    folds: Option<PathBuf>,
}

fn default_validation_fraction() -> f64 {
    0.1
}

/// Grid lists left out fall back to the standard search space.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    embedding_sizes: Option<Vec<usize>>,
    learning_rates: Option<Vec<f64>>,
    kernel_sizes: Option<Vec<usize>>,
    num_heads: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldSection {
    #[serde(default = "default_k_outer")]
    pub k_outer: usize,
    #[serde(default = "default_k_inner")]
    pub k_inner: usize,
}

impl Default for FoldSection {
    fn default() -> Self {
        FoldSection { k_outer: default_k_outer(), k_inner: default_k_inner() }
    }
}

fn default_k_outer() -> usize {
    5
}
fn default_k_inner() -> usize {
    4
}

/// `patience = 0` disables early stopping.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    #[serde(default = "default_batch")]
    batch_size: usize,
    #[serde(default = "default_max_epochs")]
    max_epochs: usize,
    #[serde(default = "default_patience")]
    patience: usize,
    #[serde(default = "default_true")]
    stop_at_perfect: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: default_batch(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            stop_at_perfect: true,
        }
    }
}

fn default_batch() -> usize {
    32
}
fn default_max_epochs() -> usize {
    100
}
fn default_patience() -> usize {
    5
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    #[serde(default = "one")]
    pub k: usize,
    #[serde(default)]
    pub best_hits: Option<PathBuf>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection { k: 1, best_hits: None }
    }
}

/// What a command needs from the config beyond the common sections.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Needs {
    Model,
    Grid,
    Baseline,
}

#[derive(Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub verbosity: Option<String>,
    pub dataset: PathBuf,
    pub output: PathBuf,
    pub schema: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub validation_fraction: f64,
    pub fold_plan: Option<PathBuf>,
    pub model: Option<McnnConfig>,
    pub grid: Option<HyperGrid>,
    pub folds: FoldSection,
    pub train: TrainSettings,
    pub baseline: BaselineSection,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub output: Option<PathBuf>,
}

fn parse_value(text: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {text}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

/// Sets `dotted.key = value` inside `table`, creating intermediate tables.
pub fn apply_set(table: &mut toml::Table, assignment: &str) -> Result<(), String> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| format!("--set {assignment:?}: expected key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("--set {assignment:?}: empty key segment"));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| format!("--set {assignment:?}: {part} is not a table"))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn model_config(table: &toml::Table, violations: &mut Vec<String>) -> Option<McnnConfig> {
    let variant = match table.get("variant").and_then(|v| v.as_str()) {
        Some(s) => match s.parse::<Variant>() {
            Ok(v) => v,
            Err(e) => {
                violations.push(format!("model.variant: {e}"));
                return None;
            }
        },
        None => {
            violations.push("model.variant: missing (cnn, bigru or transformer)".into());
            return None;
        }
    };
    if table.contains_key("seed") {
        violations.push("model.seed: set the top-level seed instead".into());
    }
    let defaults = toml::Table::try_from(McnnConfig::new(variant)).expect("config serializes");
    let mut merged = defaults;
    for (k, v) in table {
        merged.insert(k.clone(), v.clone());
    }
    match merged.try_into::<McnnConfig>() {
        Ok(c) => {
            violations.extend(c.violations().into_iter().map(|v| format!("model: {v}")));
            Some(c)
        }
        Err(e) => {
            violations.push(format!("model: {}", e.message()));
            None
        }
    }
}

fn grid_of(section: &GridSection, variant: Variant) -> HyperGrid {
    let fallback = HyperGrid::standard(variant);
    HyperGrid {
        variant,
        embedding_sizes: section.embedding_sizes.clone().unwrap_or(fallback.embedding_sizes),
        learning_rates: section.learning_rates.clone().unwrap_or(fallback.learning_rates),
        kernel_sizes: section.kernel_sizes.clone().unwrap_or(fallback.kernel_sizes),
        num_heads: section.num_heads.clone().unwrap_or(fallback.num_heads),
    }
}

impl RunConfig {
    /// Reads, overrides and validates. Every violation found is reported.
    pub fn load(path: &Path, over: &Overrides, needs: &[Needs]) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
        let mut table: toml::Table = toml::from_str(&text)
            .map_err(|e| CliError::Config(vec![format!("{}: {}", path.display(), e.message())]))?;
        let mut violations = Vec::new();
        for s in &over.sets {
            if let Err(e) = apply_set(&mut table, s) {
                violations.push(e);
            }
        }
        if !violations.is_empty() {
            return Err(CliError::Config(violations));
        }
        let raw: RawConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(vec![format!("{}: {}", path.display(), e.message())]))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_raw(raw, base, over, needs)
    }

    fn from_raw(raw: RawConfig, base: &Path, over: &Overrides, needs: &[Needs]) -> Result<Self, CliError> {
        let mut v = Vec::new();
        let seed = over.seed.unwrap_or(raw.seed);
        let jobs = over.jobs.unwrap_or(raw.jobs);
        if jobs == 0 {
            v.push("jobs: must be at least 1".into());
        }
        if let Some(level) = &raw.verbosity {
            if !["error", "warn", "info", "debug", "trace"].contains(&level.as_str()) {
                v.push(format!("verbosity: unknown level {level:?}"));
            }
        }

        let dataset = resolve(base, &raw.data.dataset);
        let output = over.output.clone().unwrap_or_else(|| resolve(base, &raw.data.output));
        let schema = raw.data.schema.as_deref().map(|p| resolve(base, p));
        let validation = raw.data.validation.as_deref().map(|p| resolve(base, p));
        let fold_plan = raw.data.folds.as_deref().map(|p| resolve(base, p));
        let best_hits = raw.baseline.best_hits.as_deref().map(|p| resolve(base, p));
        let files = [
            ("data.dataset", Some(&dataset)),
            ("data.schema", schema.as_ref()),
            ("data.validation", validation.as_ref()),
            ("data.folds", fold_plan.as_ref()),
            ("baseline.best_hits", best_hits.as_ref()),
        ];
        for (key, p) in files {
            if let Some(p) = p {
                if !p.is_file() {
                    v.push(format!("{key}: file not found: {}", p.display()));
                }
            }
        }
        let vf = raw.data.validation_fraction;
        if !(0.0..1.0).contains(&vf) {
            v.push(format!("data.validation_fraction: {vf} outside [0, 1)"));
        }

        let model = match (&raw.model, needs.contains(&Needs::Model)) {
            (Some(t), _) => model_config(t, &mut v).map(|c| McnnConfig { seed, ..c }),
            (None, true) => {
                v.push("model: section missing".into());
                None
            }
            (None, false) => None,
        };
        let grid = if needs.contains(&Needs::Grid) {
            model.as_ref().map(|m| {
                let g = grid_of(raw.grid.as_ref().unwrap_or(&GridSection::default()), m.variant);
                v.extend(g.violations().into_iter().map(|e| format!("grid: {e}")));
                g
            })
        } else {
            None
        };

        if raw.folds.k_outer < 2 || raw.folds.k_inner < 2 {
            v.push(format!(
                "folds: k_outer and k_inner must be at least 2 (got {} and {})",
                raw.folds.k_outer, raw.folds.k_inner
            ));
        }
        let t = &raw.train;
        if t.batch_size == 0 {
            v.push("train.batch_size: must be at least 1".into());
        }
        if t.max_epochs == 0 {
            v.push("train.max_epochs: must be at least 1".into());
        }
        if needs.contains(&Needs::Baseline) && raw.baseline.k == 0 {
            v.push("baseline.k: must be at least 1".into());
        }
        if !v.is_empty() {
            return Err(CliError::Config(v));
        }
        Ok(RunConfig {
            seed,
            jobs,
            verbosity: raw.verbosity,
            dataset,
            output,
            schema,
            validation,
            validation_fraction: vf,
            fold_plan,
            model,
            grid,
            folds: raw.folds,
            train: TrainSettings {
                batch_size: t.batch_size,
                max_epochs: t.max_epochs,
                patience: (t.patience > 0).then_some(t.patience),
                stop_at_perfect: t.stop_at_perfect,
            },
            baseline: BaselineSection { k: raw.baseline.k, best_hits },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, text: &str) -> PathBuf {
        fs::write(dir.join("data.jsonl"), "").unwrap();
        let p = dir.join("run.toml");
        fs::write(&p, text).unwrap();
        p
    }

    const MINIMAL: &str = "[data]\ndataset = \"data.jsonl\"\noutput = \"out\"\n[model]\nvariant = \"cnn\"\n";

    #[test]
    fn defaults_fill_the_model_section() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig::load(&write(dir.path(), MINIMAL), &Overrides::default(), &[Needs::Model, Needs::Grid]).unwrap();
        let m = c.model.unwrap();
        assert_eq!(m, McnnConfig::new(Variant::Cnn));
        assert_eq!(c.grid.unwrap(), HyperGrid::standard(Variant::Cnn));
        assert_eq!(c.dataset, dir.path().join("data.jsonl"));
        assert_eq!(c.train.patience, Some(5));
    }

    #[test]
    fn overrides_win() {
        let dir = tempfile::tempdir().unwrap();
        let over = Overrides {
            sets: vec!["model.embedding_size=100".into(), "train.patience=0".into(), "grid.learning_rates=[0.01]".into()],
            seed: Some(9),
            ..Default::default()
        };
        let c = RunConfig::load(&write(dir.path(), MINIMAL), &over, &[Needs::Model, Needs::Grid]).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.model.as_ref().unwrap().embedding_size, 100);
        assert_eq!(c.model.as_ref().unwrap().seed, 9);
        assert_eq!(c.train.patience, None);
        assert_eq!(c.grid.unwrap().learning_rates, vec![0.01]);
    }

    #[test]
    fn every_violation_is_listed() {
        let dir = tempfile::tempdir().unwrap();
        let text = "jobs = 0\n[data]\ndataset = \"missing.jsonl\"\noutput = \"o\"\n[model]\nvariant = \"cnn\"\nembedding_size = 0\n[folds]\nk_outer = 1\n";
        let err = RunConfig::load(&write(dir.path(), text), &Overrides::default(), &[Needs::Model]).unwrap_err();
        let CliError::Config(v) = err else { panic!("{err:?}") };
        assert_eq!(v.len(), 4, "{v:?}");
        assert!(v.iter().any(|m| m.starts_with("data.dataset")));
        assert!(v.iter().any(|m| m.starts_with("model:")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("{MINIMAL}learning_rat = 0.1\n");
        assert!(matches!(
            RunConfig::load(&write(dir.path(), &text), &Overrides::default(), &[Needs::Model]),
            Err(CliError::Config(_))
        ));
        let text = format!("{MINIMAL}[train]\nepochs = 3\n");
        assert!(matches!(
            RunConfig::load(&write(dir.path(), &text), &Overrides::default(), &[]),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn set_parses_typed_values() {
        let mut t = toml::Table::new();
        apply_set(&mut t, "a.b=3").unwrap();
        apply_set(&mut t, "a.c=cnn").unwrap();
        apply_set(&mut t, "d=[1, 2]").unwrap();
        assert_eq!(t["a"]["b"].as_integer(), Some(3));
        assert_eq!(t["a"]["c"].as_str(), Some("cnn"));
        assert_eq!(t["d"].as_array().unwrap().len(), 2);
        assert!(apply_set(&mut t, "novalue").is_err());
        assert!(apply_set(&mut t, "a.b.c=1").is_err());
    }
}

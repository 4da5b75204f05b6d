//! Pipeline configuration: a single versioned JSON file, with flat
//! `section.key=value` overrides applied before deserialization.
//!
//! The master seed is mandatory — nothing in the pipeline seeds from the
//! wall clock — and per-stage seeds are derived from it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::SelectionConstraints;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::predict::gbdt::BoostingParams;
use crate::predict::{FrequencyMode, RoutingRule};
use crate::util::derive_seed;

pub const CONFIG_VERSION: u32 = 1;

/// Seed streams derived from the master seed.
const STREAM_CLUSTERING: u64 = 1;
const STREAM_PREDICTION: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Directory holding `<split>.jsonl` files and depth rasters.
    pub root: PathBuf,
    /// Vocabulary JSON file.
    pub vocab: PathBuf,
    #[serde(default = "default_train_split")]
    pub train_split: String,
    #[serde(default = "default_eval_split")]
    pub eval_split: String,
}

fn default_train_split() -> String {
    "train".to_string()
}

fn default_eval_split() -> String {
    "val".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub max_sigma: f64,
    pub min_support: u64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            k_min: 8,
            k_max: 10,
            restarts: 16,
            max_sigma: 0.15,
            min_support: 50,
        }
    }
}

impl ClusteringConfig {
    pub fn constraints(&self) -> SelectionConstraints {
        SelectionConstraints {
            max_sigma: self.max_sigma,
            min_support: self.min_support,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostingConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Train (and predict) with real depth statistics; disabling imputes
    /// zeros, matching the depth-free ablation arm.
    pub use_depth: bool,
}

impl Default for BoostingConfig {
    fn default() -> Self {
        let p = BoostingParams::default();
        BoostingConfig {
            rounds: p.rounds,
            learning_rate: p.learning_rate,
            max_depth: p.max_depth,
            min_leaf: p.min_leaf,
            use_depth: true,
        }
    }
}

impl BoostingConfig {
    pub fn params(&self) -> BoostingParams {
        BoostingParams {
            rounds: self.rounds,
            learning_rate: self.learning_rate,
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictionConfig {
    pub frequency_mode: FrequencyMode,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig {
            frequency_mode: FrequencyMode::Sample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    /// Master seed; mandatory.
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub routing: RoutingRule,
    #[serde(default)]
    pub boosting: BoostingConfig,
    #[serde(default)]
    pub evaluation: EvalConfig,
    #[serde(default)]
    pub prediction: PredictionConfig,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

impl PipelineConfig {
    /// Loads the JSON config, applies `section.key=value` overrides, and
    /// validates numeric ranges. Path existence is checked separately via
    /// [`PipelineConfig::check_paths`], since not every command touches the
    /// dataset.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                file: path.to_path_buf(),
                offset: 0,
                message: e.to_string(),
            })?;
        for (key, raw) in overrides {
            apply_override(&mut value, key, raw)?;
        }
        let config: PipelineConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!(
                "{}: {e}",
                path.display()
            )))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let c = &self.clustering;
        if c.k_min == 0 || c.k_min > c.k_max {
            return Err(Error::Config(format!(
                "clustering k range [{}, {}] invalid",
                c.k_min, c.k_max
            )));
        }
        if c.restarts == 0 {
            return Err(Error::Config("clustering.restarts must be >= 1".into()));
        }
        if !c.max_sigma.is_finite() || c.max_sigma <= 0.0 {
            return Err(Error::Config("clustering.max_sigma must be positive".into()));
        }
        self.routing.validate()?;
        self.boosting.params().validate()?;
        if self.boosting.max_depth == 0 {
            return Err(Error::Config("boosting.max_depth must be >= 1".into()));
        }
        self.evaluation.validate()?;
        Ok(())
    }

    /// Verifies the referenced dataset paths exist.
    pub fn check_paths(&self) -> Result<()> {
        if !self.dataset.root.is_dir() {
            return Err(Error::Config(format!(
                "dataset.root '{}' is not a directory",
                self.dataset.root.display()
            )));
        }
        if !self.dataset.vocab.is_file() {
            return Err(Error::Config(format!(
                "dataset.vocab '{}' is not a file",
                self.dataset.vocab.display()
            )));
        }
        Ok(())
    }

    pub fn clustering_seed(&self) -> u64 {
        derive_seed(self.seed, STREAM_CLUSTERING)
    }

    pub fn prediction_seed(&self) -> u64 {
        derive_seed(self.seed, STREAM_PREDICTION)
    }
}

/// Sets `value[a][b]... = parsed(raw)` for a dotted path `a.b...`, creating
/// intermediate objects as needed. Values parse as JSON first, falling back
/// to a plain string.
fn apply_override(value: &mut serde_json::Value, path: &str, raw: &str) -> Result<()> {
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = value;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override path '{path}'")));
    }
    for part in &parts[..parts.len() - 1] {
        let obj = cursor.as_object_mut().ok_or_else(|| {
            Error::Config(format!("override path '{path}' crosses a non-object"))
        })?;
        cursor = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    let obj = cursor
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("override path '{path}' crosses a non-object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        serde_json::json!({
            "seed": 7,
            "dataset": {"root": "data", "vocab": "data/vocab.json"}
        })
        .to_string()
    }

    fn write_config(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, text).unwrap();
        (dir, path)
    }

    #[test]
    fn defaults_fill_missing_sections() {
        let (_dir, path) = write_config(&minimal_json());
        let config = PipelineConfig::load(&path, &[]).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.clustering.k_min, 8);
        assert_eq!(config.clustering.k_max, 10);
        assert_eq!(config.boosting.rounds, 200);
        assert_eq!(config.evaluation.thresholds, vec![0.25, 0.5, 0.75]);
        assert_eq!(config.prediction.frequency_mode, FrequencyMode::Sample);
        assert_eq!(config.dataset.train_split, "train");
    }

    #[test]
    fn seed_is_mandatory() {
        let (_dir, path) =
            write_config(&serde_json::json!({"dataset": {"root": "d", "vocab": "v"}}).to_string());
        let err = PipelineConfig::load(&path, &[]).unwrap_err();
        assert_eq!(err.category(), "config");
    }

    #[test]
    fn overrides_replace_and_create_fields() {
        let (_dir, path) = write_config(&minimal_json());
        let overrides = vec![
            ("clustering.k_min".to_string(), "2".to_string()),
            ("clustering.k_max".to_string(), "4".to_string()),
            ("boosting.use_depth".to_string(), "false".to_string()),
            ("dataset.eval_split".to_string(), "test".to_string()),
        ];
        let config = PipelineConfig::load(&path, &overrides).unwrap();
        assert_eq!(config.clustering.k_min, 2);
        assert_eq!(config.clustering.k_max, 4);
        assert!(!config.boosting.use_depth);
        assert_eq!(config.dataset.eval_split, "test");
    }

    #[test]
    fn partial_section_override_keeps_other_defaults() {
        // The sections are absent from the file; a single-field override
        // must not clobber the remaining defaults.
        let (_dir, path) = write_config(&minimal_json());
        let overrides = vec![
            ("routing.imbalance_threshold".to_string(), "0.9".to_string()),
            ("evaluation.matching".to_string(), "\"box\"".to_string()),
        ];
        let config = PipelineConfig::load(&path, &overrides).unwrap();
        assert_eq!(config.routing.imbalance_threshold, 0.9);
        assert_eq!(config.routing.geometric_mass_threshold, 0.5);
        assert_eq!(config.evaluation.matching, crate::eval::MatchKind::Box);
        assert_eq!(config.evaluation.thresholds, vec![0.25, 0.5, 0.75]);
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        let (_dir, path) = write_config(&minimal_json());
        let bad = vec![("clustering.k_min".to_string(), "0".to_string())];
        assert!(PipelineConfig::load(&path, &bad).is_err());
        let bad = vec![("routing.imbalance_threshold".to_string(), "1.5".to_string())];
        assert!(PipelineConfig::load(&path, &bad).is_err());
        let bad = vec![("evaluation.thresholds".to_string(), "[0.5, 0.25]".to_string())];
        assert!(PipelineConfig::load(&path, &bad).is_err());
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let (_dir, path) = write_config(&minimal_json());
        let config = PipelineConfig::load(&path, &[]).unwrap();
        assert_eq!(config.clustering_seed(), config.clustering_seed());
        assert_ne!(config.clustering_seed(), config.prediction_seed());
    }
}

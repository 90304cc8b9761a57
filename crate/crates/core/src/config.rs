//! Experiment configuration: a TOML file, `TRAJVERB__SECTION__KEY`
//! environment overrides and validation errors that name the offending field.

use crate::features::{Camera, Modality};
use crate::oracle::{OracleConfig, Verb};
use crate::sim::{SceneConfig, SceneRandomization, SimError};
use crate::train::{FinetuneHyper, PretrainHyper};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Prefix of environment variables that override config keys.
pub const ENV_PREFIX: &str = "TRAJVERB__";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config at `{path}`: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ConfigError {
    fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid { path: path.into(), message: message.into() }
    }

    /// Build from a `"field: message"` or `"field must ..."` string raised by
    /// a sub-config validator, prefixing the section name.
    fn nested(section: &str, message: &str) -> Self {
        let field: String = message.chars().take_while(|c| c.is_ascii_alphanumeric() || *c == '_').collect();
        let rest = message[field.len()..].trim_start_matches(':').trim();
        if field.is_empty() || rest.is_empty() {
            ConfigError::at(section, message)
        } else {
            ConfigError::at(format!("{section}.{field}"), rest)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    /// Output root for data, features, runs and reports.
    pub out: PathBuf,
    pub seed_root: u64,
    pub episodes: usize,
    /// Annotations per verb.
    pub per_verb: usize,
    /// Frames between candidate clip starts.
    pub clip_stride: usize,
    /// Frames between clip starts used for pretraining; a multiple of `clip_stride`.
    pub pretrain_stride: usize,
    pub verbs: Vec<Verb>,
    pub modalities: Vec<Modality>,
    /// Model seeds; each (modality, seed) pair is an independent run.
    pub seeds: Vec<u64>,
    /// Input features of the frozen random-encoder baseline.
    pub random_modality: Modality,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: "desk".into(),
            out: PathBuf::from("runs"),
            seed_root: 1,
            episodes: 200,
            per_verb: 100,
            clip_stride: 30,
            pretrain_stride: 30,
            verbs: Verb::ALL.to_vec(),
            modalities: Modality::ALL.to_vec(),
            seeds: (0..5).collect(),
            random_modality: Modality::Image2D,
        }
    }
}

/// Lattice of pretraining hyperparameters. Cells enumerate hidden width,
/// then gamma, then learning rate, then batch size, in declaration order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub enabled: bool,
    pub hidden_width: Vec<usize>,
    pub gamma: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub batch_size: Vec<usize>,
    /// Epochs per cell (reduced relative to the final pretraining run).
    pub epochs: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            hidden_width: vec![64, 128],
            gamma: vec![0.9, 0.97, 1.0],
            learning_rate: vec![1e-3, 3e-4],
            batch_size: vec![16, 64],
            epochs: 2,
        }
    }
}

impl GridConfig {
    pub fn cells(&self, base: &PretrainHyper) -> Vec<PretrainHyper> {
        let mut out = Vec::new();
        for &hidden_width in &self.hidden_width {
            for &gamma in &self.gamma {
                for &learning_rate in &self.learning_rate {
                    for &batch_size in &self.batch_size {
                        out.push(PretrainHyper {
                            hidden_width,
                            gamma,
                            learning_rate,
                            batch_size,
                            epochs: self.epochs,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub scene: SceneConfig,
    pub scene_randomization: SceneRandomization,
    pub oracle: OracleConfig,
    pub camera: Camera,
    pub pretrain: PretrainHyper,
    pub grid: GridConfig,
    pub finetune: FinetuneHyper,
    pub probe: FinetuneHyper,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentSection::default(),
            scene: SceneConfig::default(),
            scene_randomization: SceneRandomization::default(),
            oracle: OracleConfig::default(),
            camera: Camera::default(),
            pretrain: PretrainHyper::default(),
            grid: GridConfig::default(),
            finetune: FinetuneHyper::default(),
            probe: FinetuneHyper::default(),
        }
    }
}

fn parse_env_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Apply `TRAJVERB__SECTION__KEY=value` pairs onto a parsed TOML table.
/// Values are read as TOML literals, falling back to plain strings.
pub fn apply_env_overrides<I, K, V>(table: &mut toml::Table, vars: I) -> Result<(), ConfigError>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| k.as_ref().strip_prefix(ENV_PREFIX).map(|k| (k.to_ascii_lowercase(), v.as_ref().to_string())))
        .collect();
    vars.sort();
    for (key, value) in vars {
        let parts: Vec<&str> = key.split("__").collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(ConfigError::at(key.replace("__", "."), "malformed environment override"));
        }
        let mut node = &mut *table;
        for p in &parts[..parts.len() - 1] {
            let entry = node.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| ConfigError::at(parts.join("."), format!("`{p}` is not a section")))?;
        }
        node.insert(parts[parts.len() - 1].to_string(), parse_env_value(&value));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parse TOML text, apply environment overrides and validate.
    pub fn from_toml_str<I, K, V>(text: &str, env: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            ConfigError::at("<file>", e.message().to_string())
        })?;
        apply_env_overrides(&mut table, env)?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::at(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file with overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text, std::env::vars())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = &self.experiment;
        if e.name.is_empty() || !e.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(ConfigError::at("experiment.name", "must be non-empty and use only [A-Za-z0-9_-]"));
        }
        if e.episodes == 0 {
            return Err(ConfigError::at("experiment.episodes", "must be positive"));
        }
        if e.per_verb < 10 {
            return Err(ConfigError::at("experiment.per_verb", "must be at least 10 so every split gets annotations"));
        }
        if e.clip_stride == 0 {
            return Err(ConfigError::at("experiment.clip_stride", "must be positive"));
        }
        if e.pretrain_stride == 0 || e.pretrain_stride % e.clip_stride != 0 {
            return Err(ConfigError::at("experiment.pretrain_stride", "must be a positive multiple of clip_stride"));
        }
        check_distinct("experiment.verbs", &e.verbs)?;
        check_distinct("experiment.modalities", &e.modalities)?;
        check_distinct("experiment.seeds", &e.seeds)?;
        let sim = |section: &str, err: SimError| match err {
            SimError::InvalidConfig(m) => ConfigError::nested(section, &m),
            other => ConfigError::at(section, other.to_string()),
        };
        self.scene.validate().map_err(|err| sim("scene", err))?;
        self.scene_randomization.validate(&self.scene).map_err(|err| sim("scene_randomization", err))?;
        self.camera.validate().map_err(|m| ConfigError::nested("camera", &m))?;
        self.pretrain.validate().map_err(|m| ConfigError::nested("pretrain", &m))?;
        self.finetune.validate().map_err(|m| ConfigError::nested("finetune", &m))?;
        self.probe.validate().map_err(|m| ConfigError::nested("probe", &m))?;
        if self.grid.enabled {
            let g = &self.grid;
            for (field, empty) in [
                ("hidden_width", g.hidden_width.is_empty()),
                ("gamma", g.gamma.is_empty()),
                ("learning_rate", g.learning_rate.is_empty()),
                ("batch_size", g.batch_size.is_empty()),
            ] {
                if empty {
                    return Err(ConfigError::at(format!("grid.{field}"), "must not be empty when the grid is enabled"));
                }
            }
            for cell in g.cells(&self.pretrain) {
                cell.validate().map_err(|m| ConfigError::nested("grid", &m))?;
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_json(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn check_distinct<T: Ord + std::fmt::Debug>(path: &str, items: &[T]) -> Result<(), ConfigError> {
    if items.is_empty() {
        return Err(ConfigError::at(path, "must not be empty"));
    }
    let set: BTreeSet<&T> = items.iter().collect();
    if set.len() != items.len() {
        return Err(ConfigError::at(path, "entries must be distinct"));
    }
    Ok(())
}

/// Hex SHA-256 of a value's JSON serialization.
pub fn hash_json<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const NO_ENV: [(&str, &str); 0] = [];

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml_str("", NO_ENV).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn default_round_trips_through_toml() {
        let text = ExperimentConfig::default().to_toml();
        assert_eq!(ExperimentConfig::from_toml_str(&text, NO_ENV).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn type_errors_report_the_field_path() {
        let err = ExperimentConfig::from_toml_str("[scene]\nfriction_mu = \"high\"\n", NO_ENV).unwrap_err();
        match err {
            ConfigError::Invalid { path, .. } => assert_eq!(path, "scene.friction_mu"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn range_errors_report_the_field_path() {
        let err = ExperimentConfig::from_toml_str("[scene]\nfriction_mu = 3.0\n", NO_ENV).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref path, .. } if path == "scene.friction_mu"), "{err}");
        let err = ExperimentConfig::from_toml_str("[pretrain]\ngamma = 0.0\n", NO_ENV).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref path, .. } if path == "pretrain.gamma"), "{err}");
        let err = ExperimentConfig::from_toml_str("[experiment]\nseeds = [1, 1]\n", NO_ENV).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref path, .. } if path == "experiment.seeds"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml_str("[oracle]\nfall_drop = 0.2\n", NO_ENV).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref path, .. } if path.starts_with("oracle")), "{err}");
    }

    #[test]
    fn environment_overrides_file_values() {
        let env = [
            ("TRAJVERB__PRETRAIN__EPOCHS", "7"),
            ("TRAJVERB__EXPERIMENT__NAME", "smoke"),
            ("TRAJVERB__EXPERIMENT__MODALITIES", "[\"Traj2D\"]"),
            ("OTHER__PRETRAIN__EPOCHS", "9"),
        ];
        let cfg = ExperimentConfig::from_toml_str("[pretrain]\nepochs = 2\n", env).unwrap();
        assert_eq!(cfg.pretrain.epochs, 7);
        assert_eq!(cfg.experiment.name, "smoke");
        assert_eq!(cfg.experiment.modalities, vec![Modality::Traj2D]);
    }

    #[test]
    fn grid_cells_follow_declaration_order() {
        let g = GridConfig { hidden_width: vec![8, 16], gamma: vec![0.9], learning_rate: vec![1e-3, 1e-2], batch_size: vec![4], ..Default::default() };
        let cells = g.cells(&PretrainHyper::default());
        let key: Vec<(usize, f64)> = cells.iter().map(|c| (c.hidden_width, c.learning_rate)).collect();
        assert_eq!(key, vec![(8, 1e-3), (8, 1e-2), (16, 1e-3), (16, 1e-2)]);
        assert!(cells.iter().all(|c| c.epochs == g.epochs));
        assert_eq!(GridConfig::default().cells(&PretrainHyper::default()).len(), 24);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.oracle.fall_min_drop = 0.2;
        assert_ne!(a.hash(), b.hash());
    }
}

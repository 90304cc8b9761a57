//! Stage runner behind the command-line interface.
//!
//! Artifacts live under `<out>`:
//! - `data/<exp>/episodes/*.json`, `data/<exp>/episodes.json` (index),
//!   `data/<exp>/annotations.jsonl`, `data/<exp>/splits.json`
//! - `features/<exp>/<modality>.bin` and `<modality>.norm.json`
//! - `runs/<exp>/<condition>/grid.json`
//! - `runs/<exp>/<condition>/<seed>/{pretrain,finetune,probe}/` with
//!   `checkpoint.bin`, `checkpoint.json`, `metrics.csv`, `record.json`
//!   and, for fine-tuning, `test_scores.csv`
//! - `report/<exp>/`
//!
//! Each stage writes a stamp holding the hash of its inputs (config slice
//! plus upstream stamps) and skips itself when the stamp already matches.

mod stages;

pub use stages::{fall_stress_clips, StressClip};

use crate::config::{hash_json, ConfigError, ExperimentConfig};
use crate::eval::EvalError;
use crate::features::{FeatureError, Modality};
use crate::nn::NnError;
use crate::oracle::OracleError;
use crate::sim::{EpisodeFileError, SimError};
use crate::train::TrainError;
use serde::Serialize;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing {what}; run `trajverb {stage}` first")]
    Missing { stage: &'static str, what: String },
    #[error("confidence intervals need at least 2 seeds per condition; {condition} has {found}")]
    TooFewSeeds { condition: String, found: usize },
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    EpisodeFile(#[from] EpisodeFileError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Format(String),
}

impl PipelineError {
    /// 1 for configuration problems, 2 for unmet preconditions, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Missing { .. } | PipelineError::TooFewSeeds { .. } => 2,
            PipelineError::Eval(EvalError::TooFewSeeds(_)) => 2,
            _ => 3,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

pub(crate) fn io<T>(r: std::io::Result<T>, context: impl fmt::Display) -> Result<T> {
    r.map_err(|source| PipelineError::Io { context: context.to_string(), source })
}

/// A model row of the report: a trained modality or the frozen random encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Trained(Modality),
    Random,
}

impl Condition {
    pub fn name(self) -> String {
        match self {
            Condition::Trained(m) => m.name().to_string(),
            Condition::Random => crate::eval::RANDOM_LABEL.to_string(),
        }
    }

    pub fn slug(self) -> String {
        self.name().to_ascii_lowercase()
    }

    pub fn label(self) -> String {
        match self {
            Condition::Trained(m) => m.label().to_string(),
            Condition::Random => "Random".to_string(),
        }
    }

    /// Input features the condition reads.
    pub fn modality(self, cfg: &ExperimentConfig) -> Modality {
        match self {
            Condition::Trained(m) => m,
            Condition::Random => cfg.experiment.random_modality,
        }
    }

    /// Every configured modality followed by the random baseline.
    pub fn all(cfg: &ExperimentConfig) -> Vec<Condition> {
        cfg.experiment.modalities.iter().map(|&m| Condition::Trained(m)).chain([Condition::Random]).collect()
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Condition {
    type Err = FeatureError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("random") {
            Ok(Condition::Random)
        } else {
            s.parse().map(Condition::Trained)
        }
    }
}

/// Paths of every artifact.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub root: PathBuf,
    pub experiment: String,
}

impl Layout {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self { root: cfg.experiment.out.clone(), experiment: cfg.experiment.name.clone() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data").join(&self.experiment)
    }

    pub fn episodes_dir(&self) -> PathBuf {
        self.data_dir().join("episodes")
    }

    pub fn episode_index(&self) -> PathBuf {
        self.data_dir().join("episodes.json")
    }

    pub fn annotations(&self) -> PathBuf {
        self.data_dir().join("annotations.jsonl")
    }

    pub fn splits(&self) -> PathBuf {
        self.data_dir().join("splits.json")
    }

    pub fn features_dir(&self) -> PathBuf {
        self.root.join("features").join(&self.experiment)
    }

    pub fn features(&self, m: Modality) -> PathBuf {
        self.features_dir().join(format!("{}.bin", m.slug()))
    }

    pub fn normalizer(&self, m: Modality) -> PathBuf {
        self.features_dir().join(format!("{}.norm.json", m.slug()))
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs").join(&self.experiment)
    }

    pub fn grid(&self, m: Modality) -> PathBuf {
        self.runs_dir().join(m.slug()).join("grid.json")
    }

    pub fn run_dir(&self, c: Condition, seed: u64) -> PathBuf {
        self.runs_dir().join(c.slug()).join(seed.to_string())
    }

    pub fn stage_dir(&self, c: Condition, seed: u64, stage: &str) -> PathBuf {
        self.run_dir(c, seed).join(stage)
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report").join(&self.experiment)
    }
}

/// Stamp files record the input hash of a finished stage.
pub(crate) fn stamp_path(artifact: &Path) -> PathBuf {
    let name = artifact.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    artifact.with_file_name(format!(".{name}.stamp"))
}

pub(crate) fn read_stamp(artifact: &Path) -> Option<String> {
    std::fs::read_to_string(stamp_path(artifact)).ok().map(|s| s.trim().to_string())
}

pub(crate) fn write_stamp(artifact: &Path, hash: &str) -> Result<()> {
    let p = stamp_path(artifact);
    io(std::fs::write(&p, format!("{hash}\n")), p.display())
}

pub(crate) fn require_stamp(artifact: &Path, stage: &'static str, what: impl Into<String>) -> Result<String> {
    read_stamp(artifact).ok_or_else(|| PipelineError::Missing { stage, what: what.into() })
}

pub(crate) fn stage_hash<T: Serialize>(stage: &str, value: &T) -> String {
    hash_json(&serde_json::json!({ "stage": stage, "inputs": value }))
}

/// Options shared by every stage invocation.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub layout: Layout,
    /// Recompute even when stamps match.
    pub force: bool,
}

/// Which stages ran and which were skipped as up to date.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StageLog {
    pub ran: Vec<String>,
    pub skipped: Vec<String>,
}

impl StageLog {
    fn record(&mut self, name: String, ran: bool) {
        if ran {
            log::info!("{name}: done");
            self.ran.push(name);
        } else {
            log::info!("{name}: up to date");
            self.skipped.push(name);
        }
    }

    fn extend(&mut self, other: StageLog) {
        self.ran.extend(other.ran);
        self.skipped.extend(other.skipped);
    }
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, force: bool) -> Self {
        let layout = Layout::new(&cfg);
        Self { cfg, layout, force }
    }

    pub(crate) fn fresh(&self, artifact: &Path, hash: &str) -> bool {
        !self.force && read_stamp(artifact).as_deref() == Some(hash)
    }

    /// Modalities that need feature caches: the configured ones plus the
    /// random baseline's input.
    pub fn feature_modalities(&self) -> Vec<Modality> {
        let mut m = self.cfg.experiment.modalities.clone();
        if !m.contains(&self.cfg.experiment.random_modality) {
            m.push(self.cfg.experiment.random_modality);
        }
        m
    }

    /// Every stage in order, then the report.
    pub fn run_all(&self) -> Result<StageLog> {
        let mut log = StageLog::default();
        log.extend(self.generate()?);
        log.extend(self.label()?);
        log.extend(self.featurize(&self.feature_modalities())?);
        if self.cfg.grid.enabled {
            log.extend(self.grid_search(&self.cfg.experiment.modalities)?);
        }
        let seeds = self.cfg.experiment.seeds.clone();
        for c in Condition::all(&self.cfg) {
            if let Condition::Trained(m) = c {
                log.extend(self.pretrain(m, &seeds)?);
            }
            log.extend(self.finetune(c, &seeds)?);
            log.extend(self.probe(c, &seeds)?);
        }
        log.extend(self.report()?);
        Ok(log)
    }
}

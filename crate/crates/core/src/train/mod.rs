//! Self-supervised pretraining, grid search, verb fine-tuning and the
//! position probe.

mod finetune;
mod pretrain;

pub use finetune::{finetune, labeled_splits, probe, zscore_fit, FinetuneOutcome, LabeledClip, ProbeClip, ProbeOutcome};
pub use pretrain::{grid_search, pretrain, GridOutcome};

use crate::eval::EvalError;
use crate::features::ClipFeatures;
use crate::nn::{Dense, EncoderParams, NnError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("need at least {need} training clips, have {have}")]
    TooFewClips { need: usize, have: usize },
    #[error("training diverged at epoch {epoch}: loss {loss} vs initial {initial}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },
    #[error("grid is empty")]
    EmptyGrid,
    #[error("every grid cell failed")]
    AllCellsFailed,
    #[error("test split is locked until final evaluation")]
    TestLocked,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("clip {0} has no features")]
    MissingFeatures(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainHyper {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-step discount of the prediction loss, in (0, 1].
    pub gamma: f64,
    pub hidden_width: usize,
    pub epochs: usize,
    pub ff_layers: usize,
    pub teacher_forcing: bool,
    /// Set per run from the seed root; never part of a config file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PretrainHyper {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 3e-3,
            gamma: 0.97,
            hidden_width: 32,
            epochs: 4,
            ff_layers: 1,
            teacher_forcing: false,
            seed: 0,
        }
    }
}

impl PretrainHyper {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size: must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err("learning_rate: must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err("gamma: must lie in (0, 1]".into());
        }
        if self.hidden_width == 0 {
            return Err("hidden_width: must be positive".into());
        }
        if self.epochs == 0 {
            return Err("epochs: must be positive".into());
        }
        if self.ff_layers == 0 {
            return Err("ff_layers: must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneHyper {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub freeze_encoder: bool,
    /// Set per run from the seed root; never part of a config file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for FinetuneHyper {
    fn default() -> Self {
        Self { batch_size: 16, learning_rate: 3e-3, max_epochs: 30, patience: 5, freeze_encoder: false, seed: 0 }
    }
}

impl FinetuneHyper {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size: must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err("learning_rate: must be positive".into());
        }
        if self.max_epochs == 0 {
            return Err("max_epochs: must be positive".into());
        }
        if self.patience == 0 {
            return Err("patience: must be positive".into());
        }
        Ok(())
    }
}

/// Encoder plus a verb head, `h -> |verbs|` logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub encoder: EncoderParams,
    pub head: Dense,
}

/// Encoder plus a `h -> 3` position head.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeParams {
    pub encoder: EncoderParams,
    pub head: Dense,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Modality name, or the baseline label.
    pub condition: String,
    pub seed: u64,
    pub hyper: serde_json::Value,
    pub history: Vec<EpochStat>,
    /// Epoch of the dev-selected checkpoint.
    pub selected_epoch: usize,
    pub final_test: BTreeMap<String, f64>,
}

impl RunRecord {
    /// `epoch,train_loss,dev_metric,test_metric`; the test column is filled
    /// only on the selected epoch.
    pub fn write_metrics_csv<W: Write>(&self, mut w: W, test_key: &str) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,dev_metric,test_metric")?;
        for s in &self.history {
            let test = match (s.epoch == self.selected_epoch, self.final_test.get(test_key)) {
                (true, Some(v)) => v.to_string(),
                _ => String::new(),
            };
            writeln!(w, "{},{},{},{}", s.epoch, s.train_loss, s.dev_metric, test)?;
        }
        Ok(())
    }
}

/// Train/dev/test lists where the test part stays unreadable until
/// [`SplitLoader::unlock_test`] is called for final evaluation.
#[derive(Clone, Debug)]
pub struct SplitLoader<T> {
    train: Vec<T>,
    dev: Vec<T>,
    test: Vec<T>,
    unlocked: bool,
}

impl<T> SplitLoader<T> {
    pub fn new(train: Vec<T>, dev: Vec<T>, test: Vec<T>) -> Self {
        Self { train, dev, test, unlocked: false }
    }

    pub fn train(&self) -> &[T] {
        &self.train
    }

    pub fn dev(&self) -> &[T] {
        &self.dev
    }

    pub fn test(&self) -> Result<&[T], TrainError> {
        if self.unlocked {
            Ok(&self.test)
        } else {
            Err(TrainError::TestLocked)
        }
    }

    pub fn is_unlocked(&self) -> bool {
        self.unlocked
    }

    pub fn unlock_test(&mut self) {
        self.unlocked = true;
    }

    /// A fresh, locked loader with the same contents.
    pub fn relocked(&self) -> Self
    where
        T: Clone,
    {
        Self::new(self.train.clone(), self.dev.clone(), self.test.clone())
    }
}

pub(crate) fn input_f64(features: &ClipFeatures, i: usize) -> Vec<f64> {
    features.input(i).iter().map(|&x| x as f64).collect()
}

pub(crate) fn future_f64(features: &ClipFeatures, i: usize) -> Vec<f64> {
    features.future(i).iter().map(|&x| x as f64).collect()
}

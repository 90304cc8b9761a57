use super::{
    io, require_stamp, stage_hash, write_stamp, Condition, Pipeline, PipelineError, Result, StageLog,
};
use crate::config::hash_json;
use crate::eval::{chance_scores, make_report, read_scores_csv, write_scores_csv, ConditionRuns, ReportInput, SeedRun};
use crate::features::{
    featurize, read_cache, window_rows, write_cache, ClipFeatures, FeatureError, Featurizer, FrameParts, Modality,
    Normalizer, MIN_NORMALIZER_CLIPS,
};
use crate::nn::{final_hidden, read_checkpoint, write_checkpoint, Checkpoint, EncoderParams, EncoderShape};
use crate::oracle::{
    build_annotation_set, extract_clips, label_clip, read_annotations, write_annotations, AnnotationSet, Clip, ClipRef,
    Split, Verb, CLIP_FRAMES,
};
use crate::rng::{derive_seed, derived_rng};
use crate::sim::{generate_episode, read_episode, write_episode, Episode};
use crate::train::{
    finetune, grid_search, labeled_splits, pretrain, probe, zscore_fit, PretrainHyper, ProbeClip, RunRecord,
    SplitLoader,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct EpisodeEntry {
    index: usize,
    seed: u64,
    file: String,
    script: String,
    frames: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GridFile {
    cells: Vec<PretrainHyper>,
    /// Best dev loss per cell; null for failed cells.
    dev_losses: Vec<Option<f64>>,
    best_index: usize,
    best: PretrainHyper,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Format(e.to_string()))?;
    io(std::fs::write(path, text + "\n"), path.display())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = io(std::fs::read_to_string(path), path.display())?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Format(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    io(std::fs::create_dir_all(path), path.display())
}

fn cache_key(hash: &str) -> u64 {
    u64::from_str_radix(&hash[..16], 16).expect("hex digest")
}

/// Clip indices of `f` whose episode lies in `split` and whose start is a
/// multiple of `stride`.
fn split_indices(f: &ClipFeatures, splits: &BTreeMap<u64, Split>, split: Split, stride: usize) -> Vec<usize> {
    f.clips
        .iter()
        .enumerate()
        .filter(|(_, c)| splits.get(&c.episode_seed) == Some(&split) && c.start_frame as usize % stride == 0)
        .map(|(i, _)| i)
        .collect()
}

fn write_run(
    dir: &Path,
    checkpoint: &Checkpoint,
    record: &RunRecord,
    test_key: &str,
    sidecar: serde_json::Value,
) -> Result<()> {
    create_dir(dir)?;
    let mut buf = Vec::new();
    write_checkpoint(checkpoint, &mut buf)?;
    io(std::fs::write(dir.join("checkpoint.bin"), buf), dir.display())?;
    write_json(&dir.join("checkpoint.json"), &sidecar)?;
    let mut csv = Vec::new();
    io(record.write_metrics_csv(&mut csv, test_key), dir.display())?;
    io(std::fs::write(dir.join("metrics.csv"), csv), dir.display())?;
    write_json(&dir.join("record.json"), record)
}

fn load_checkpoint(path: &Path, stage: &'static str) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)
        .map_err(|_| PipelineError::Missing { stage, what: path.display().to_string() })?;
    Ok(read_checkpoint(bytes.as_slice())?)
}

impl Pipeline {
    fn episode_seed(&self, i: usize) -> u64 {
        derive_seed(self.cfg.experiment.seed_root, &format!("episode/{i}"))
    }

    /// Episode `i` of the dataset, before serialization.
    pub fn simulate_episode(&self, i: usize) -> Result<Episode> {
        let e = &self.cfg.experiment;
        let scene =
            self.cfg.scene_randomization.sample(&self.cfg.scene, &mut derived_rng(e.seed_root, &format!("scene/{i}")));
        Ok(generate_episode(self.episode_seed(i), &scene)?)
    }

    /// Simulate every episode of the dataset.
    pub fn generate(&self) -> Result<StageLog> {
        let e = &self.cfg.experiment;
        let hash = stage_hash(
            "gen",
            &json!({
                "seed_root": e.seed_root,
                "episodes": e.episodes,
                "scene": self.cfg.scene,
                "randomization": self.cfg.scene_randomization,
            }),
        );
        let index = self.layout.episode_index();
        let mut log = StageLog::default();
        if self.fresh(&index, &hash) {
            log.record("gen".into(), false);
            return Ok(log);
        }
        let dir = self.layout.episodes_dir();
        if dir.exists() {
            io(std::fs::remove_dir_all(&dir), dir.display())?;
        }
        create_dir(&dir)?;
        let entries = (0..e.episodes)
            .into_par_iter()
            .map(|i| {
                let ep = self.simulate_episode(i)?;
                let seed = ep.seed;
                let file = format!("{i:05}.json");
                let mut buf = Vec::new();
                write_episode(&ep, &mut buf)?;
                io(std::fs::write(dir.join(&file), buf), &file)?;
                Ok(EpisodeEntry { index: i, seed, file, script: ep.script_tag.name().to_string(), frames: ep.len() })
            })
            .collect::<Result<Vec<_>>>()?;
        write_json(&index, &entries)?;
        write_stamp(&index, &hash)?;
        log.record("gen".into(), true);
        Ok(log)
    }

    /// Episodes in index order, as stored on disk.
    pub fn load_episodes(&self) -> Result<Vec<Episode>> {
        let index = self.layout.episode_index();
        require_stamp(&index, "gen", "episodes")?;
        let entries: Vec<EpisodeEntry> = read_json(&index)?;
        let dir = self.layout.episodes_dir();
        entries
            .par_iter()
            .map(|e| {
                let path = dir.join(&e.file);
                let bytes = io(std::fs::read(&path), path.display())?;
                Ok(read_episode(bytes.as_slice())?)
            })
            .collect()
    }

    /// Label clips with the verb oracles and assign splits.
    pub fn label(&self) -> Result<StageLog> {
        let e = &self.cfg.experiment;
        let up = require_stamp(&self.layout.episode_index(), "gen", "episodes")?;
        let hash = stage_hash(
            "label",
            &json!({
                "up": up,
                "oracle": self.cfg.oracle,
                "verbs": e.verbs,
                "per_verb": e.per_verb,
                "clip_stride": e.clip_stride,
                "seed_root": e.seed_root,
            }),
        );
        let path = self.layout.annotations();
        let mut log = StageLog::default();
        if self.fresh(&path, &hash) {
            log.record("label".into(), false);
            return Ok(log);
        }
        let episodes = self.load_episodes()?;
        let set = build_annotation_set(
            &episodes,
            &e.verbs,
            e.per_verb,
            e.clip_stride,
            &self.cfg.oracle,
            derive_seed(e.seed_root, "annotations"),
        )?;
        let mut buf = Vec::new();
        io(write_annotations(&set, &mut buf), path.display())?;
        io(std::fs::write(&path, buf), path.display())?;
        write_json(&self.layout.splits(), &set.splits)?;
        for v in set.verbs() {
            log::info!("label: {v} positive share {:.2}", set.positive_fraction(v));
        }
        write_stamp(&path, &hash)?;
        log.record("label".into(), true);
        Ok(log)
    }

    pub fn load_annotations(&self) -> Result<AnnotationSet> {
        let path = self.layout.annotations();
        require_stamp(&path, "label", "annotations")?;
        let splits: BTreeMap<u64, Split> = read_json(&self.layout.splits())?;
        let file = io(std::fs::File::open(&path), path.display())?;
        Ok(read_annotations(std::io::BufReader::new(file), splits)?)
    }

    fn features_hash(&self, m: Modality) -> Result<String> {
        let up = require_stamp(&self.layout.annotations(), "label", "annotations")?;
        Ok(stage_hash(
            "featurize",
            &json!({
                "up": up,
                "camera": self.cfg.camera,
                "modality": m,
                "clip_stride": self.cfg.experiment.clip_stride,
            }),
        ))
    }

    /// Build normalized feature caches for the given modalities.
    pub fn featurize(&self, modalities: &[Modality]) -> Result<StageLog> {
        let mut log = StageLog::default();
        let mut todo = Vec::new();
        for &m in modalities {
            let hash = self.features_hash(m)?;
            if self.fresh(&self.layout.features(m), &hash) {
                log.record(format!("featurize {m}"), false);
            } else {
                todo.push((m, hash));
            }
        }
        if todo.is_empty() {
            return Ok(log);
        }
        let episodes = self.load_episodes()?;
        let set = self.load_annotations()?;
        let featurizer = Featurizer::new(self.cfg.camera.clone())?;
        let with_image = todo.iter().any(|(m, _)| m.uses_image());
        let parts: Vec<Vec<FrameParts>> =
            episodes.par_iter().map(|ep| featurizer.parts(&ep.frames, &ep.config, with_image)).collect();
        let mut clips = Vec::new();
        for ep in &episodes {
            clips.extend(extract_clips(ep, self.cfg.experiment.clip_stride)?.iter().map(|c| c.reference));
        }
        let by_seed: HashMap<u64, usize> = episodes.iter().enumerate().map(|(i, e)| (e.seed, i)).collect();
        let pairs: Vec<(u64, &[FrameParts])> =
            episodes.iter().zip(&parts).map(|(e, p)| (e.seed, p.as_slice())).collect();
        create_dir(&self.layout.features_dir())?;
        for (m, hash) in todo {
            let train_rows: Vec<Vec<f64>> = clips
                .par_iter()
                .filter(|c| set.splits.get(&c.episode_seed) == Some(&Split::Train))
                .map(|c| {
                    let s = c.start_frame as usize;
                    window_rows(&parts[by_seed[&c.episode_seed]][s..s + CLIP_FRAMES], m)
                })
                .collect();
            if train_rows.len() < MIN_NORMALIZER_CLIPS {
                return Err(FeatureError::TooFewClips(train_rows.len()).into());
            }
            let norm = Normalizer::fit_values(m, train_rows.iter().map(Vec::as_slice));
            let features = ClipFeatures::build(&pairs, &clips, &norm, cache_key(&hash))?;
            let path = self.layout.features(m);
            let mut buf = Vec::new();
            write_cache(&features, &mut buf)?;
            io(std::fs::write(&path, buf), path.display())?;
            write_json(&self.layout.normalizer(m), &norm)?;
            write_stamp(&path, &hash)?;
            log.record(format!("featurize {m}"), true);
        }
        Ok(log)
    }

    pub fn load_features(&self, m: Modality) -> Result<ClipFeatures> {
        let path = self.layout.features(m);
        let stamp = require_stamp(&path, "featurize", format!("{m} features"))?;
        let bytes = io(std::fs::read(&path), path.display())?;
        let f = read_cache(bytes.as_slice())?;
        if f.modality != m || f.key != cache_key(&stamp) {
            return Err(PipelineError::Missing { stage: "featurize", what: format!("current {m} features") });
        }
        Ok(f)
    }

    pub fn load_normalizer(&self, m: Modality) -> Result<Normalizer> {
        require_stamp(&self.layout.features(m), "featurize", format!("{m} features"))?;
        read_json(&self.layout.normalizer(m))
    }

    fn grid_hash(&self, m: Modality) -> Result<String> {
        let up = require_stamp(&self.layout.features(m), "featurize", format!("{m} features"))?;
        Ok(stage_hash(
            "grid",
            &json!({
                "up": up,
                "grid": self.cfg.grid,
                "pretrain": self.cfg.pretrain,
                "pretrain_stride": self.cfg.experiment.pretrain_stride,
            }),
        ))
    }

    /// Pick pretraining hyperparameters per modality by dev loss.
    pub fn grid_search(&self, modalities: &[Modality]) -> Result<StageLog> {
        let mut log = StageLog::default();
        for &m in modalities {
            let hash = self.grid_hash(m)?;
            let path = self.layout.grid(m);
            if self.fresh(&path, &hash) {
                log.record(format!("gridsearch {m}"), false);
                continue;
            }
            let f = self.load_features(m)?;
            let set = self.load_annotations()?;
            let stride = self.cfg.experiment.pretrain_stride;
            let train = split_indices(&f, &set.splits, Split::Train, stride);
            let dev = split_indices(&f, &set.splits, Split::Dev, stride);
            let seed = derive_seed(self.cfg.experiment.seed_root, &format!("grid/{}", m.slug()));
            let cells: Vec<PretrainHyper> = self
                .cfg
                .grid
                .cells(&self.cfg.pretrain)
                .into_iter()
                .map(|c| PretrainHyper { seed, ..c })
                .collect();
            let out = grid_search(&cells, &f, &train, &dev)?;
            create_dir(path.parent().expect("grid file has a parent"))?;
            let file = GridFile {
                dev_losses: out.dev_losses.iter().map(|&l| l.is_finite().then_some(l)).collect(),
                cells,
                best_index: out.best_index,
                best: out.best,
            };
            write_json(&path, &file)?;
            write_stamp(&path, &hash)?;
            log.record(format!("gridsearch {m}"), true);
        }
        Ok(log)
    }

    /// Hyperparameters for the final pretraining run and the hash they came from.
    fn pretrain_hyper(&self, m: Modality) -> Result<(PretrainHyper, serde_json::Value)> {
        if !self.cfg.grid.enabled {
            return Ok((self.cfg.pretrain.clone(), json!(null)));
        }
        let path = self.layout.grid(m);
        let stamp = require_stamp(&path, "gridsearch", format!("{m} grid result"))?;
        if stamp != self.grid_hash(m)? {
            return Err(PipelineError::Missing { stage: "gridsearch", what: format!("current {m} grid result") });
        }
        let g: GridFile = read_json(&path)?;
        Ok((PretrainHyper { epochs: self.cfg.pretrain.epochs, ..g.best }, json!(stamp)))
    }

    /// Self-supervised pretraining for one modality and several seeds.
    pub fn pretrain(&self, m: Modality, seeds: &[u64]) -> Result<StageLog> {
        let c = Condition::Trained(m);
        let up = require_stamp(&self.layout.features(m), "featurize", format!("{m} features"))?;
        let (base, grid) = self.pretrain_hyper(m)?;
        let root = self.cfg.experiment.seed_root;
        let mut log = StageLog::default();
        let mut todo = Vec::new();
        for &seed in seeds {
            let hyper = PretrainHyper { seed: derive_seed(root, &format!("pretrain/{}/{seed}", m.slug())), ..base.clone() };
            let hash = stage_hash(
                "pretrain",
                &json!({ "up": up, "grid": grid, "hyper": hyper, "stride": self.cfg.experiment.pretrain_stride }),
            );
            if self.fresh(&self.layout.stage_dir(c, seed, "pretrain"), &hash) {
                log.record(format!("pretrain {m} seed {seed}"), false);
            } else {
                todo.push((seed, hyper, hash));
            }
        }
        if todo.is_empty() {
            return Ok(log);
        }
        let f = self.load_features(m)?;
        let set = self.load_annotations()?;
        let stride = self.cfg.experiment.pretrain_stride;
        let train = split_indices(&f, &set.splits, Split::Train, stride);
        let dev = split_indices(&f, &set.splits, Split::Dev, stride);
        let done = todo
            .par_iter()
            .map(|(seed, hyper, hash)| {
                let (encoder, mut record) = pretrain(&f, &train, &dev, hyper)?;
                record.condition = m.name().to_string();
                let dir = self.layout.stage_dir(c, *seed, "pretrain");
                let sidecar = json!({
                    "condition": m.name(),
                    "seed": seed,
                    "input_dim": encoder.shape.input_dim,
                    "hidden": encoder.shape.hidden,
                    "ff_layers": encoder.shape.ff_layers,
                    "selected_epoch": record.selected_epoch,
                    "train_clips": train.len(),
                    "dev_clips": dev.len(),
                    "hyper": hyper,
                });
                write_run(&dir, &Checkpoint { modality: m, encoder, head: None }, &record, "", sidecar)?;
                write_stamp(&dir, hash)?;
                log::info!("pretrain {m} seed {seed}: dev loss {:.4} at epoch {}", record.final_test["dev_loss"], record.selected_epoch);
                Ok(format!("pretrain {m} seed {seed}"))
            })
            .collect::<Result<Vec<_>>>()?;
        for name in done {
            log.record(name, true);
        }
        Ok(log)
    }

    /// Upstream hash of a fine-tuning or probing run.
    fn encoder_source(&self, c: Condition, seed: u64) -> Result<String> {
        match c {
            Condition::Trained(m) => require_stamp(
                &self.layout.stage_dir(c, seed, "pretrain"),
                "pretrain",
                format!("{m} pretraining for seed {seed}"),
            ),
            Condition::Random => {
                let m = c.modality(&self.cfg);
                let up = require_stamp(&self.layout.features(m), "featurize", format!("{m} features"))?;
                Ok(stage_hash(
                    "random-encoder",
                    &json!({
                        "up": up,
                        "hidden": self.cfg.pretrain.hidden_width,
                        "ff_layers": self.cfg.pretrain.ff_layers,
                        "seed": seed,
                        "seed_root": self.cfg.experiment.seed_root,
                    }),
                ))
            }
        }
    }

    fn load_encoder(&self, c: Condition, seed: u64) -> Result<EncoderParams> {
        match c {
            Condition::Trained(_) => {
                Ok(load_checkpoint(&self.layout.stage_dir(c, seed, "pretrain").join("checkpoint.bin"), "pretrain")?.encoder)
            }
            Condition::Random => {
                let shape = EncoderShape {
                    input_dim: c.modality(&self.cfg).dim(),
                    hidden: self.cfg.pretrain.hidden_width,
                    ff_layers: self.cfg.pretrain.ff_layers,
                };
                Ok(EncoderParams::init(shape, &mut derived_rng(self.cfg.experiment.seed_root, &format!("random/{seed}"))))
            }
        }
    }

    fn downstream_todo(
        &self,
        stage: &'static str,
        c: Condition,
        seeds: &[u64],
        extra: serde_json::Value,
        log: &mut StageLog,
    ) -> Result<Vec<(u64, String)>> {
        let m = c.modality(&self.cfg);
        let feat = require_stamp(&self.layout.features(m), "featurize", format!("{m} features"))?;
        let mut todo = Vec::new();
        for &seed in seeds {
            let hash = stage_hash(
                stage,
                &json!({ "encoder": self.encoder_source(c, seed)?, "features": feat, "extra": extra }),
            );
            if self.fresh(&self.layout.stage_dir(c, seed, stage), &hash) {
                log.record(format!("{stage} {c} seed {seed}"), false);
            } else {
                todo.push((seed, hash));
            }
        }
        Ok(todo)
    }

    /// Verb fine-tuning. The random baseline keeps its encoder frozen.
    pub fn finetune(&self, c: Condition, seeds: &[u64]) -> Result<StageLog> {
        let mut log = StageLog::default();
        let label = require_stamp(&self.layout.annotations(), "label", "annotations")?;
        let verbs = self.cfg.experiment.verbs.clone();
        let extra = json!({ "label": label, "hyper": self.cfg.finetune, "verbs": verbs });
        let todo = self.downstream_todo("finetune", c, seeds, extra, &mut log)?;
        if todo.is_empty() {
            return Ok(log);
        }
        let m = c.modality(&self.cfg);
        let f = self.load_features(m)?;
        let set = self.load_annotations()?;
        let loader = labeled_splits(&set, &verbs, &f)?;
        let root = self.cfg.experiment.seed_root;
        let done = todo
            .par_iter()
            .map(|(seed, hash)| {
                let encoder = self.load_encoder(c, *seed)?;
                let mut hyper = self.cfg.finetune.clone();
                hyper.seed = derive_seed(root, &format!("finetune/{}/{seed}", c.slug()));
                hyper.freeze_encoder |= c == Condition::Random;
                let out = finetune(&encoder, &mut loader.relocked(), &f, &verbs, &hyper)?;
                let mut record = out.record;
                record.condition = c.name();
                let dir = self.layout.stage_dir(c, *seed, "finetune");
                let sidecar = json!({
                    "condition": c.name(),
                    "modality": m,
                    "seed": seed,
                    "verbs": verbs,
                    "selected_epoch": record.selected_epoch,
                    "hyper": hyper,
                });
                let ck = Checkpoint { modality: m, encoder: out.params.encoder, head: Some(out.params.head) };
                write_run(&dir, &ck, &record, "macro_map", sidecar)?;
                let mut buf = Vec::new();
                io(write_scores_csv(&out.test_scores, &mut buf), dir.display())?;
                io(std::fs::write(dir.join("test_scores.csv"), buf), dir.display())?;
                write_stamp(&dir, hash)?;
                log::info!(
                    "finetune {c} seed {seed}: test macro mAP {:.4}, micro {:.4}",
                    record.final_test["macro_map"],
                    record.final_test["micro_map"]
                );
                Ok(format!("finetune {c} seed {seed}"))
            })
            .collect::<Result<Vec<_>>>()?;
        for name in done {
            log.record(name, true);
        }
        Ok(log)
    }

    /// Annotated clips per split with z-scored final-input-frame object positions.
    fn probe_loader(&self, set: &AnnotationSet, episodes: &[Episode], f: &ClipFeatures) -> Result<SplitLoader<ProbeClip>> {
        let by_seed: HashMap<u64, &Episode> = episodes.iter().map(|e| (e.seed, e)).collect();
        let mut clips: [BTreeSet<ClipRef>; 3] = Default::default();
        for e in &set.entries {
            clips[e.split as usize].insert(e.clip);
        }
        let position = |c: &ClipRef| -> Result<[f64; 3]> {
            let ep = by_seed
                .get(&c.episode_seed)
                .ok_or_else(|| PipelineError::Format(format!("episode {} not found", c.episode_seed)))?;
            let clip = Clip::at(ep, c.start_frame as usize)
                .ok_or_else(|| PipelineError::Format(format!("clip {c:?} does not fit its episode")))?;
            Ok(clip.last_input().obj_pos.to_array())
        };
        let train_pos = clips[Split::Train as usize].iter().map(position).collect::<Result<Vec<_>>>()?;
        let (mean, std) = zscore_fit(&train_pos);
        let mut lists = Vec::new();
        for split in &clips {
            let list = split
                .iter()
                .map(|c| {
                    let p = position(c)?;
                    let index = f.position(c).ok_or_else(|| PipelineError::Missing {
                        stage: "featurize",
                        what: format!("features for clip {c:?}"),
                    })?;
                    Ok(ProbeClip { index, clip: *c, target: [0, 1, 2].map(|k| (p[k] - mean[k]) / std[k]) })
                })
                .collect::<Result<Vec<_>>>()?;
            lists.push(list);
        }
        let test = lists.pop().expect("three splits");
        let dev = lists.pop().expect("three splits");
        let train = lists.pop().expect("three splits");
        Ok(SplitLoader::new(train, dev, test))
    }

    /// 3D position probe. The random baseline keeps its encoder frozen.
    pub fn probe(&self, c: Condition, seeds: &[u64]) -> Result<StageLog> {
        let mut log = StageLog::default();
        let label = require_stamp(&self.layout.annotations(), "label", "annotations")?;
        let extra = json!({ "label": label, "hyper": self.cfg.probe });
        let todo = self.downstream_todo("probe", c, seeds, extra, &mut log)?;
        if todo.is_empty() {
            return Ok(log);
        }
        let m = c.modality(&self.cfg);
        let f = self.load_features(m)?;
        let set = self.load_annotations()?;
        let episodes = self.load_episodes()?;
        let loader = self.probe_loader(&set, &episodes, &f)?;
        drop(episodes);
        let root = self.cfg.experiment.seed_root;
        let done = todo
            .par_iter()
            .map(|(seed, hash)| {
                let encoder = self.load_encoder(c, *seed)?;
                let mut hyper = self.cfg.probe.clone();
                hyper.seed = derive_seed(root, &format!("probe/{}/{seed}", c.slug()));
                hyper.freeze_encoder |= c == Condition::Random;
                let out = probe(&encoder, &mut loader.relocked(), &f, &hyper)?;
                let mut record = out.record;
                record.condition = c.name();
                let dir = self.layout.stage_dir(c, *seed, "probe");
                let sidecar = json!({
                    "condition": c.name(),
                    "modality": m,
                    "seed": seed,
                    "selected_epoch": record.selected_epoch,
                    "hyper": hyper,
                });
                let ck = Checkpoint { modality: m, encoder: out.params.encoder, head: Some(out.params.head) };
                write_run(&dir, &ck, &record, "test_mse", sidecar)?;
                write_stamp(&dir, hash)?;
                log::info!("probe {c} seed {seed}: test MSE {:.4}", out.test_mse);
                Ok(format!("probe {c} seed {seed}"))
            })
            .collect::<Result<Vec<_>>>()?;
        for name in done {
            log.record(name, true);
        }
        Ok(log)
    }

    /// Seeds of `c` with finished fine-tuning runs.
    pub fn finished_seeds(&self, c: Condition) -> Vec<u64> {
        self.cfg
            .experiment
            .seeds
            .iter()
            .copied()
            .filter(|&s| super::read_stamp(&self.layout.stage_dir(c, s, "finetune")).is_some())
            .collect()
    }

    /// Tables, figure and report.json from the stored run records.
    pub fn report(&self) -> Result<StageLog> {
        let mut log = StageLog::default();
        let conditions = Condition::all(&self.cfg);
        let mut stamps = Vec::new();
        for &c in &conditions {
            let seeds = self.finished_seeds(c);
            if seeds.is_empty() {
                return Err(PipelineError::Missing { stage: "finetune", what: format!("fine-tuned runs for {c}") });
            }
            if seeds.len() < 2 {
                return Err(PipelineError::TooFewSeeds { condition: c.name(), found: seeds.len() });
            }
            for s in seeds {
                stamps.push(super::read_stamp(&self.layout.stage_dir(c, s, "finetune")));
                stamps.push(super::read_stamp(&self.layout.stage_dir(c, s, "probe")));
            }
        }
        let mut public = self.cfg.clone();
        public.experiment.out = Default::default();
        let config_hash = hash_json(&public);
        let hash = stage_hash("report", &json!({ "runs": stamps, "config": config_hash }));
        let dir = self.layout.report_dir();
        if self.fresh(&dir, &hash) && dir.join("table1.csv").exists() {
            log.record("report".into(), false);
            return Ok(log);
        }
        let root = self.cfg.experiment.seed_root;
        let mut runs = Vec::new();
        for &c in &conditions {
            let mut seed_runs = Vec::new();
            for seed in self.finished_seeds(c) {
                let fdir = self.layout.stage_dir(c, seed, "finetune");
                let file = io(std::fs::File::open(fdir.join("test_scores.csv")), fdir.display())?;
                let scores = read_scores_csv(std::io::BufReader::new(file))?;
                let pdir = self.layout.stage_dir(c, seed, "probe");
                let probe_mse = if super::read_stamp(&pdir).is_some() {
                    let rec: RunRecord = read_json(&pdir.join("record.json"))?;
                    rec.final_test.get("test_mse").copied()
                } else {
                    None
                };
                seed_runs.push(SeedRun { seed, scores, probe_mse });
            }
            runs.push(ConditionRuns { name: c.name(), label: c.label(), runs: seed_runs });
        }
        let chance = runs[0]
            .runs
            .iter()
            .map(|r| SeedRun {
                seed: r.seed,
                scores: chance_scores(&r.scores, &mut derived_rng(root, &format!("chance/{}", r.seed))),
                probe_mse: None,
            })
            .collect();
        let e = &self.cfg.experiment;
        let metadata = BTreeMap::from([
            ("config_hash".to_string(), config_hash),
            ("experiment".to_string(), e.name.clone()),
            ("seed_root".to_string(), e.seed_root.to_string()),
            ("seeds".to_string(), format!("{:?}", e.seeds)),
            ("episodes".to_string(), e.episodes.to_string()),
            ("per_verb".to_string(), e.per_verb.to_string()),
            ("random_modality".to_string(), e.random_modality.name().to_string()),
        ]);
        let input = ReportInput { conditions: runs, chance, metadata, bootstrap_seed: derive_seed(root, "bootstrap") };
        let summary = make_report(&input, &dir)?;
        if let Some(flag) = summary.no_clear_winner {
            log::info!("report: no clear winner among single modalities = {flag}");
        }
        write_stamp(&dir, &hash)?;
        log.record("report".into(), true);
        Ok(log)
    }
}

/// A clip of the occlusion stress split.
#[derive(Clone, Debug)]
pub struct StressClip {
    pub episode: usize,
    pub start: usize,
    pub label: bool,
    /// Share of input frames in which the object is mostly hidden.
    pub occluded_share: f64,
}

/// Fresh episodes (disjoint seeds from the dataset) and their clips whose
/// object is mostly hidden in at least `min_share` of the input frames.
pub fn fall_stress_clips(
    p: &Pipeline,
    episodes: usize,
    min_share: f64,
) -> Result<(Vec<Episode>, Vec<StressClip>)> {
    let root = p.cfg.experiment.seed_root;
    let featurizer = Featurizer::new(p.cfg.camera.clone())?;
    let eps = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let scene =
                p.cfg.scene_randomization.sample(&p.cfg.scene, &mut derived_rng(root, &format!("stress/scene/{i}")));
            let ep = generate_episode(derive_seed(root, &format!("stress/episode/{i}")), &scene)?;
            // Round-trip through the episode format so values match stored data.
            let mut buf = Vec::new();
            write_episode(&ep, &mut buf)?;
            Ok(read_episode(buf.as_slice())?)
        })
        .collect::<Result<Vec<Episode>>>()?;
    let mut clips = Vec::new();
    for (ei, ep) in eps.iter().enumerate() {
        for c in extract_clips(ep, p.cfg.experiment.clip_stride)? {
            let hidden = c.frames.iter().filter(|f| featurizer.occluded_fraction(f, c.config) >= 0.5).count();
            let share = hidden as f64 / c.frames.len() as f64;
            if share >= min_share {
                clips.push(StressClip {
                    episode: ei,
                    start: c.reference.start_frame as usize,
                    label: label_clip(&c, Verb::Fall, &p.cfg.oracle),
                    occluded_share: share,
                });
            }
        }
    }
    Ok((eps, clips))
}

impl Pipeline {
    /// Fall logits of `c` on stress clips, averaged over the fine-tuned seed models.
    pub fn stress_scores(&self, c: Condition, episodes: &[Episode], clips: &[StressClip]) -> Result<Vec<f64>> {
        let m = c.modality(&self.cfg);
        let k = self
            .cfg
            .experiment
            .verbs
            .iter()
            .position(|&v| v == Verb::Fall)
            .ok_or_else(|| PipelineError::Format("fall is not among the configured verbs".into()))?;
        let norm = self.load_normalizer(m)?;
        let featurizer = Featurizer::new(self.cfg.camera.clone())?;
        let inputs = clips
            .par_iter()
            .map(|s| {
                let clip = Clip::at(&episodes[s.episode], s.start).expect("stress clip fits");
                Ok(featurize(&clip, m, &featurizer, &norm)?.values)
            })
            .collect::<Result<Vec<_>>>()?;
        let seeds = self.finished_seeds(c);
        if seeds.is_empty() {
            return Err(PipelineError::Missing { stage: "finetune", what: format!("fine-tuned runs for {c}") });
        }
        let mut total = vec![0.0; clips.len()];
        for seed in &seeds {
            let ck = load_checkpoint(&self.layout.stage_dir(c, *seed, "finetune").join("checkpoint.bin"), "finetune")?;
            let head = ck.head.ok_or_else(|| PipelineError::Format("fine-tuned checkpoint has no head".into()))?;
            let logits: Vec<f64> =
                inputs.par_iter().map(|x| head.forward(&final_hidden(&ck.encoder, x))[k]).collect();
            for (t, l) in total.iter_mut().zip(logits) {
                *t += l;
            }
        }
        Ok(total.into_iter().map(|t| t / seeds.len() as f64).collect())
    }
}

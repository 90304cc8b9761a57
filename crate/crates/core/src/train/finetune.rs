use super::{input_f64, ClassifierParams, EpochStat, FinetuneHyper, ProbeParams, RunRecord, SplitLoader, TrainError};
use crate::eval::{map_scores, ScoredEntry, ScoredSet};
use crate::features::ClipFeatures;
use crate::nn::{
    batch_gradients, bce_masked, classify_example, final_hidden, mse, probe_example, Adam, Dense, EncoderParams,
};
use crate::oracle::{AnnotationSet, ClipRef, Split, Verb};
use crate::rng::derived_rng;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use std::collections::BTreeMap;

/// One annotated clip with a label slot per verb (`None` = not annotated).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledClip {
    pub index: usize,
    pub clip: ClipRef,
    pub labels: Vec<Option<bool>>,
}

/// Group annotations by clip within each split.
pub fn labeled_splits(
    set: &AnnotationSet,
    verbs: &[Verb],
    features: &ClipFeatures,
) -> Result<SplitLoader<LabeledClip>, TrainError> {
    let mut by_split: [BTreeMap<ClipRef, Vec<Option<bool>>>; 3] = Default::default();
    for e in &set.entries {
        let Some(k) = verbs.iter().position(|&v| v == e.verb) else { continue };
        let slot = by_split[e.split as usize].entry(e.clip).or_insert_with(|| vec![None; verbs.len()]);
        slot[k] = Some(e.label);
    }
    let mut lists = Vec::new();
    for m in by_split {
        let list = m
            .into_iter()
            .map(|(clip, labels)| {
                let index =
                    features.position(&clip).ok_or_else(|| TrainError::MissingFeatures(format!("{clip:?}")))?;
                Ok(LabeledClip { index, clip, labels })
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        lists.push(list);
    }
    let test = lists.pop().expect("three splits");
    let dev = lists.pop().expect("three splits");
    let train = lists.pop().expect("three splits");
    debug_assert_eq!(Split::ALL.len(), 3);
    Ok(SplitLoader::new(train, dev, test))
}

/// A clip with its z-scored final-frame object position.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeClip {
    pub index: usize,
    pub clip: ClipRef,
    pub target: [f64; 3],
}

/// Mean and std (clamped at 1e-6) of training positions.
pub fn zscore_fit(positions: &[[f64; 3]]) -> ([f64; 3], [f64; 3]) {
    let n = positions.len().max(1) as f64;
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for k in 0..3 {
        mean[k] = positions.iter().map(|p| p[k]).sum::<f64>() / n;
        std[k] = (positions.iter().map(|p| (p[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt().max(1e-6);
    }
    (mean, std)
}

/// Encoder outputs either recomputed per step (trainable encoder) or cached
/// once (frozen encoder).
struct Hidden {
    cache: Option<BTreeMap<usize, Vec<f64>>>,
}

impl Hidden {
    fn new(frozen: bool, enc: &EncoderParams, f: &ClipFeatures, idx: impl Iterator<Item = usize>) -> Self {
        if !frozen {
            return Self { cache: None };
        }
        let idx: Vec<usize> = idx.collect();
        let hs: Vec<Vec<f64>> = idx.par_iter().map(|&i| final_hidden(enc, &input_f64(f, i))).collect();
        Self { cache: Some(idx.into_iter().zip(hs).collect()) }
    }

    fn get(&self, enc: &EncoderParams, f: &ClipFeatures, i: usize) -> Vec<f64> {
        match &self.cache {
            Some(c) => c[&i].clone(),
            None => final_hidden(enc, &input_f64(f, i)),
        }
    }
}

/// Shared loop: minibatch Adam on encoder (unless frozen) and head, dev
/// selection with patience, best checkpoint restored at the end.
struct Loop<'a> {
    features: &'a ClipFeatures,
    hyper: &'a FinetuneHyper,
    tag: &'a str,
    /// Higher dev metric is better when true.
    maximize: bool,
}

impl Loop<'_> {
    #[allow(clippy::too_many_arguments)]
    fn run<T: Sync>(
        &self,
        enc: &mut EncoderParams,
        head: &mut Dense,
        hidden: &Hidden,
        train: &[T],
        index_of: impl Fn(&T) -> usize + Sync,
        example: impl Fn(&EncoderParams, &Dense, &[f64], &T, bool) -> (f64, Vec<f64>) + Sync,
        head_loss: impl Fn(&[f64], &T) -> (f64, Vec<f64>) + Sync,
        dev_metric: impl Fn(&EncoderParams, &Dense) -> Result<f64, TrainError>,
    ) -> Result<(Vec<EpochStat>, usize), TrainError> {
        let frozen = self.hyper.freeze_encoder;
        let f = self.features;
        let train_loss_now = |enc: &EncoderParams, head: &Dense| -> f64 {
            let l: Vec<f64> =
                train.par_iter().map(|t| head_loss(&head.forward(&hidden.get(enc, f, index_of(t))), t).0).collect();
            l.iter().sum::<f64>() / l.len().max(1) as f64
        };
        let mut history = vec![EpochStat { epoch: 0, train_loss: train_loss_now(enc, head), dev_metric: dev_metric(enc, head)? }];
        let better = |a: f64, b: f64| if self.maximize { a > b } else { a < b };
        let mut best = (history[0].dev_metric, enc.clone(), head.clone(), 0usize);
        let mut adam_enc = Adam::new(enc.theta.len(), self.hyper.learning_rate);
        let mut adam_head = Adam::new(head.theta.len(), self.hyper.learning_rate);
        let mut stale = 0usize;
        let order_all: Vec<usize> = (0..train.len()).collect();
        for epoch in 1..=self.hyper.max_epochs {
            let mut order = order_all.clone();
            order.shuffle(&mut derived_rng(self.hyper.seed, &format!("{}/epoch/{epoch}", self.tag)));
            let mut total = 0.0;
            for batch in order.chunks(self.hyper.batch_size) {
                let (loss, grad) = batch_gradients(batch.len(), |k| {
                    let t = &train[batch[k]];
                    if frozen {
                        let h = hidden.get(enc, f, index_of(t));
                        let (l, dout) = head_loss(&head.forward(&h), t);
                        let mut g = vec![0.0; head.theta.len()];
                        head.backward(&h, &dout, &mut g);
                        (l, g)
                    } else {
                        example(enc, head, &input_f64(f, index_of(t)), t, true)
                    }
                });
                let split = if frozen { 0 } else { enc.theta.len() };
                if !frozen {
                    enc.check_gradient(&grad[..split])?;
                    adam_enc.update(&mut enc.theta, &grad[..split]);
                }
                if grad[split..].iter().any(|g| !g.is_finite()) {
                    return Err(crate::nn::NnError::NonFiniteGradient { block: "head".into() }.into());
                }
                adam_head.update(&mut head.theta, &grad[split..]);
                total += loss * batch.len() as f64;
            }
            let dev = dev_metric(enc, head)?;
            history.push(EpochStat { epoch, train_loss: total / train.len().max(1) as f64, dev_metric: dev });
            if better(dev, best.0) {
                best = (dev, enc.clone(), head.clone(), epoch);
                stale = 0;
            } else {
                stale += 1;
                if stale >= self.hyper.patience {
                    break;
                }
            }
        }
        *enc = best.1;
        *head = best.2;
        Ok((history, best.3))
    }
}

fn scored(
    enc: &EncoderParams,
    head: &Dense,
    hidden: &Hidden,
    f: &ClipFeatures,
    clips: &[LabeledClip],
    verbs: &[Verb],
) -> ScoredSet {
    let logits: Vec<Vec<f64>> = clips.par_iter().map(|c| head.forward(&hidden.get(enc, f, c.index))).collect();
    let mut entries = Vec::new();
    for (c, z) in clips.iter().zip(&logits) {
        for (k, l) in c.labels.iter().enumerate() {
            if let Some(label) = *l {
                entries.push(ScoredEntry { verb: verbs[k], clip: c.clip, score: z[k], label });
            }
        }
    }
    ScoredSet { entries }
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub params: ClassifierParams,
    pub record: RunRecord,
    /// Logits of every test annotation under the selected checkpoint.
    pub test_scores: ScoredSet,
}

/// Train a fresh verb head (and the encoder unless frozen) with masked BCE,
/// early-stopping on dev macro mAP. The test split is read once, after
/// selection.
pub fn finetune(
    encoder: &EncoderParams,
    data: &mut SplitLoader<LabeledClip>,
    features: &ClipFeatures,
    verbs: &[Verb],
    hyper: &FinetuneHyper,
) -> Result<FinetuneOutcome, TrainError> {
    hyper.validate().map_err(TrainError::InvalidHyper)?;
    if data.train().is_empty() {
        return Err(TrainError::TooFewClips { need: 1, have: 0 });
    }
    let mut enc = encoder.clone();
    let mut head = Dense::init(enc.shape.hidden, verbs.len(), &mut derived_rng(hyper.seed, "finetune/head"));
    let hidden = Hidden::new(
        hyper.freeze_encoder,
        &enc,
        features,
        data.train().iter().chain(data.dev()).map(|c| c.index),
    );
    let lp = Loop { features, hyper, tag: "finetune", maximize: true };
    let dev = data.dev().to_vec();
    let (history, selected) = lp.run(
        &mut enc,
        &mut head,
        &hidden,
        data.train(),
        |c| c.index,
        |e, h, x, c, _| {
            let (l, g, _) = classify_example(e, h, x, &c.labels, true);
            (l, g)
        },
        |z, c| bce_masked(z, &c.labels),
        |e, h| Ok(map_scores(&scored(e, h, &hidden, features, &dev, verbs))?.macro_),
    )?;

    data.unlock_test();
    let test = data.test()?.to_vec();
    let test_hidden = Hidden::new(hyper.freeze_encoder, &enc, features, test.iter().map(|c| c.index));
    let test_scores = scored(&enc, &head, &test_hidden, features, &test, verbs);
    let m = map_scores(&test_scores)?;
    let mut final_test = BTreeMap::from([("micro_map".to_string(), m.micro), ("macro_map".to_string(), m.macro_)]);
    for (v, ap) in &m.per_verb {
        final_test.insert(format!("ap_{v}"), *ap);
    }
    let record = RunRecord {
        condition: String::new(),
        seed: hyper.seed,
        hyper: serde_json::to_value(hyper).expect("plain struct"),
        history,
        selected_epoch: selected,
        final_test,
    };
    Ok(FinetuneOutcome { params: ClassifierParams { encoder: enc, head }, record, test_scores })
}

#[derive(Clone, Debug)]
pub struct ProbeOutcome {
    pub params: ProbeParams,
    pub record: RunRecord,
    pub dev_mse: f64,
    pub test_mse: f64,
}

/// Regress the z-scored final-frame object position from the encoder's last
/// hidden state; report the test MSE of the dev-selected epoch.
pub fn probe(
    encoder: &EncoderParams,
    data: &mut SplitLoader<ProbeClip>,
    features: &ClipFeatures,
    hyper: &FinetuneHyper,
) -> Result<ProbeOutcome, TrainError> {
    hyper.validate().map_err(TrainError::InvalidHyper)?;
    if data.train().is_empty() {
        return Err(TrainError::TooFewClips { need: 1, have: 0 });
    }
    let mut enc = encoder.clone();
    let mut head = Dense::init(enc.shape.hidden, 3, &mut derived_rng(hyper.seed, "probe/head"));
    let hidden =
        Hidden::new(hyper.freeze_encoder, &enc, features, data.train().iter().chain(data.dev()).map(|c| c.index));
    let dev = data.dev().to_vec();
    let eval = |e: &EncoderParams, h: &Dense, hid: &Hidden, clips: &[ProbeClip]| -> f64 {
        let l: Vec<f64> = clips.par_iter().map(|c| mse(&h.forward(&hid.get(e, features, c.index)), &c.target).0).collect();
        l.iter().sum::<f64>() / l.len().max(1) as f64
    };
    let lp = Loop { features, hyper, tag: "probe", maximize: false };
    let (history, selected) = lp.run(
        &mut enc,
        &mut head,
        &hidden,
        data.train(),
        |c| c.index,
        |e, h, x, c, _| {
            let (l, g, _) = probe_example(e, h, x, &c.target, true);
            (l, g)
        },
        |y, c| mse(y, &c.target),
        |e, h| Ok(eval(e, h, &hidden, &dev)),
    )?;
    let dev_mse = history[selected].dev_metric;
    data.unlock_test();
    let test = data.test()?.to_vec();
    let test_hidden = Hidden::new(hyper.freeze_encoder, &enc, features, test.iter().map(|c| c.index));
    let test_mse = eval(&enc, &head, &test_hidden, &test);
    let record = RunRecord {
        condition: String::new(),
        seed: hyper.seed,
        hyper: serde_json::to_value(hyper).expect("plain struct"),
        history,
        selected_epoch: selected,
        final_test: BTreeMap::from([("test_mse".to_string(), test_mse), ("dev_mse".to_string(), dev_mse)]),
    };
    Ok(ProbeOutcome { params: ProbeParams { encoder: enc, head }, record, dev_mse, test_mse })
}

use super::{future_f64, input_f64, EpochStat, PretrainHyper, RunRecord, TrainError};
use crate::features::ClipFeatures;
use crate::nn::{batch_gradients, pretrain_example, pretrain_loss, Adam, EncoderParams, EncoderShape};
use crate::rng::derived_rng;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use std::cmp::Ordering;
use std::collections::BTreeMap;

/// Loss more than this multiple of the initial loss counts as divergent.
const DIVERGENCE_FACTOR: f64 = 10.0;
const DIVERGENCE_EPOCHS: usize = 2;

fn mean_loss(p: &EncoderParams, f: &ClipFeatures, idx: &[usize], hyper: &PretrainHyper) -> f64 {
    if idx.is_empty() {
        return f64::NAN;
    }
    let losses: Vec<f64> = idx
        .par_iter()
        .map(|&i| pretrain_loss(p, &input_f64(f, i), &future_f64(f, i), hyper.gamma, hyper.teacher_forcing))
        .collect();
    losses.iter().sum::<f64>() / idx.len() as f64
}

/// Minimize the discounted rollout loss with Adam; return the epoch
/// checkpoint with the lowest dev loss (epoch 0 is the initialization).
pub fn pretrain(
    features: &ClipFeatures,
    train: &[usize],
    dev: &[usize],
    hyper: &PretrainHyper,
) -> Result<(EncoderParams, RunRecord), TrainError> {
    hyper.validate().map_err(TrainError::InvalidHyper)?;
    if train.len() < hyper.batch_size {
        return Err(TrainError::TooFewClips { need: hyper.batch_size, have: train.len() });
    }
    let shape = EncoderShape { input_dim: features.dim, hidden: hyper.hidden_width, ff_layers: hyper.ff_layers };
    let mut params = EncoderParams::init(shape, &mut derived_rng(hyper.seed, "pretrain/init"));
    let dev_set = if dev.is_empty() { train } else { dev };

    let initial = mean_loss(&params, features, train, hyper);
    let mut history = vec![EpochStat { epoch: 0, train_loss: initial, dev_metric: mean_loss(&params, features, dev_set, hyper) }];
    let mut best = (history[0].dev_metric, params.clone(), 0usize);
    let mut adam = Adam::new(params.theta.len(), hyper.learning_rate);
    let mut over = 0usize;

    for epoch in 1..=hyper.epochs {
        let mut order = train.to_vec();
        order.shuffle(&mut derived_rng(hyper.seed, &format!("pretrain/epoch/{epoch}")));
        let mut total = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let (loss, grad) = batch_gradients(batch.len(), |k| {
                let i = batch[k];
                pretrain_example(&params, &input_f64(features, i), &future_f64(features, i), hyper.gamma, hyper.teacher_forcing)
            });
            params.check_gradient(&grad)?;
            adam.update(&mut params.theta, &grad);
            total += loss * batch.len() as f64;
        }
        let train_loss = total / order.len() as f64;
        let dev_loss = mean_loss(&params, features, dev_set, hyper);
        if !train_loss.is_finite() || train_loss > DIVERGENCE_FACTOR * initial {
            over += 1;
            if over >= DIVERGENCE_EPOCHS {
                return Err(TrainError::Diverged { epoch, loss: train_loss, initial });
            }
        } else {
            over = 0;
        }
        history.push(EpochStat { epoch, train_loss, dev_metric: dev_loss });
        if dev_loss < best.0 {
            best = (dev_loss, params.clone(), epoch);
        }
    }
    let record = RunRecord {
        condition: String::new(),
        seed: hyper.seed,
        hyper: serde_json::to_value(hyper).expect("plain struct"),
        history,
        selected_epoch: best.2,
        final_test: BTreeMap::from([("dev_loss".to_string(), best.0)]),
    };
    Ok((best.1, record))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridOutcome {
    pub best_index: usize,
    pub best: PretrainHyper,
    /// Best dev loss per cell; infinite for cells that failed.
    pub dev_losses: Vec<f64>,
}

/// Pretrain every cell and keep the lowest dev loss. Ties go to the smaller
/// hidden width, then larger gamma, then lower learning rate, then the
/// earlier cell.
pub fn grid_search(
    cells: &[PretrainHyper],
    features: &ClipFeatures,
    train: &[usize],
    dev: &[usize],
) -> Result<GridOutcome, TrainError> {
    if cells.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    let dev_losses: Vec<f64> = cells
        .iter()
        .map(|h| match pretrain(features, train, dev, h) {
            Ok((_, rec)) => rec.final_test["dev_loss"],
            Err(_) => f64::INFINITY,
        })
        .map(|l| if l.is_nan() { f64::INFINITY } else { l })
        .collect();
    let best_index = (0..cells.len())
        .min_by(|&a, &b| {
            let (x, y) = (&cells[a], &cells[b]);
            dev_losses[a]
                .partial_cmp(&dev_losses[b])
                .unwrap_or(Ordering::Equal)
                .then(x.hidden_width.cmp(&y.hidden_width))
                .then(y.gamma.partial_cmp(&x.gamma).unwrap_or(Ordering::Equal))
                .then(x.learning_rate.partial_cmp(&y.learning_rate).unwrap_or(Ordering::Equal))
                .then(a.cmp(&b))
        })
        .expect("non-empty grid");
    if dev_losses[best_index].is_infinite() {
        return Err(TrainError::AllCellsFailed);
    }
    Ok(GridOutcome { best_index, best: cells[best_index].clone(), dev_losses })
}

//! Average precision, micro/macro mAP and confidence intervals.

use super::EvalError;
use crate::oracle::{ClipRef, Verb};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::BTreeMap;

/// Mean precision at the rank of each positive, ranking by descending
/// score. Tied scores keep their input order (stable sort).
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Length { scores: scores.len(), labels: labels.len() });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::NanScore);
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("no NaN"));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / positives as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntry {
    pub verb: Verb,
    pub clip: ClipRef,
    pub score: f64,
    pub label: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub entries: Vec<ScoredEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapScores {
    /// AP of all (verb, clip) entries pooled into one ranking.
    pub micro: f64,
    /// Unweighted mean of the per-verb APs.
    pub macro_: f64,
    pub per_verb: BTreeMap<Verb, f64>,
}

impl ScoredSet {
    pub fn verbs(&self) -> Vec<Verb> {
        let mut v: Vec<Verb> = self.entries.iter().map(|e| e.verb).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn for_verb(&self, verb: Verb) -> (Vec<f64>, Vec<bool>) {
        self.entries.iter().filter(|e| e.verb == verb).map(|e| (e.score, e.label)).unzip()
    }
}

pub fn map_scores(set: &ScoredSet) -> Result<MapScores, EvalError> {
    let mut per_verb = BTreeMap::new();
    for verb in set.verbs() {
        let (s, l) = set.for_verb(verb);
        if l.iter().all(|&x| x) {
            return Err(EvalError::SingleClass(verb));
        }
        per_verb.insert(verb, average_precision(&s, &l).map_err(|_| EvalError::SingleClass(verb))?);
    }
    if per_verb.is_empty() {
        return Err(EvalError::NoPositives);
    }
    let (s, l): (Vec<f64>, Vec<bool>) = set.entries.iter().map(|e| (e.score, e.label)).unzip();
    let micro = average_precision(&s, &l)?;
    let macro_ = per_verb.values().sum::<f64>() / per_verb.len() as f64;
    Ok(MapScores { micro, macro_, per_verb })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn clipped(self, lo: f64, hi: f64) -> Interval {
        Interval { mean: self.mean, lo: self.lo.clamp(lo, hi), hi: self.hi.clamp(lo, hi) }
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn half_width(&self) -> f64 {
        (self.hi - self.lo) / 2.0
    }
}

/// Student-t interval `mean +- t_{n-1} s / sqrt(n)` over independent samples.
pub fn confidence_interval(samples: &[f64], level: f64) -> Result<Interval, EvalError> {
    let n = samples.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples(n));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(EvalError::Level(level));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - (1.0 - level) / 2.0);
    let half = t * var.sqrt() / (n as f64).sqrt();
    Ok(Interval { mean, lo: mean - half, hi: mean + half })
}

/// Percentile interval of `stat` over `draws` resamples with replacement.
/// Resamples on which `stat` returns `None` are redrawn. The mean field
/// holds `stat` on the full sample.
pub fn bootstrap<T, R, F>(items: &[T], draws: usize, level: f64, rng: &mut R, stat: F) -> Result<Interval, EvalError>
where
    T: Clone,
    R: Rng,
    F: Fn(&[T]) -> Option<f64>,
{
    let point = stat(items).ok_or(EvalError::NoPositives)?;
    let n = items.len();
    let mut values = Vec::with_capacity(draws);
    let mut sample = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while values.len() < draws {
        attempts += 1;
        if attempts > draws * 100 {
            return Err(EvalError::Bootstrap);
        }
        sample.clear();
        sample.extend((0..n).map(|_| items[rng.gen_range(0..n)].clone()));
        if let Some(v) = stat(&sample) {
            values.push(v);
        }
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite statistic"));
    let q = |p: f64| values[((p * draws as f64).floor() as usize).min(draws - 1)];
    let alpha = (1.0 - level) / 2.0;
    Ok(Interval { mean: point, lo: q(alpha), hi: q(1.0 - alpha) })
}

/// Bootstrap interval of AP over (score, label) pairs.
pub fn bootstrap_ap<R: Rng>(scores: &[f64], labels: &[bool], draws: usize, rng: &mut R) -> Result<Interval, EvalError> {
    let items: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    bootstrap(&items, draws, 0.95, rng, |s| {
        let (a, b): (Vec<f64>, Vec<bool>) = s.iter().copied().unzip();
        average_precision(&a, &b).ok()
    })
}

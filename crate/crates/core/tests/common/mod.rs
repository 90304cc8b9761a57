#![allow(dead_code)]

use rayon::prelude::*;
use trajverb::config::ExperimentConfig;
use trajverb::pipeline::Pipeline;
use trajverb::sim::Episode;

/// The first `n` episodes of the default dataset.
pub fn default_episodes(n: usize) -> Vec<Episode> {
    let p = Pipeline::new(ExperimentConfig::default(), false);
    (0..n).into_par_iter().map(|i| p.simulate_episode(i).unwrap()).collect()
}

/// Central differences of `f` at every coordinate of `theta`.
pub fn numeric_gradient(theta: &[f64], eps: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = t[i];
            t[i] = orig + eps;
            let a = f(&t);
            t[i] = orig - eps;
            let b = f(&t);
            t[i] = orig;
            (a - b) / (2.0 * eps)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|)` with the denominator floored at 1e-6.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6)).fold(0.0, f64::max)
}

/// Relative gradient errors of the rollout, classification and probe losses
/// on one random small network (d <= 4, h <= 6, T <= 8).
pub fn gradient_errors(seed: u64) -> [f64; 3] {
    use rand::Rng;
    use trajverb::nn::{classify_example, pretrain_example, probe_example, Dense, EncoderParams, EncoderShape};
    let mut rng = trajverb::rng::rng_from(seed);
    let shape = EncoderShape { input_dim: rng.gen_range(1..=4), hidden: rng.gen_range(1..=6), ff_layers: rng.gen_range(1..=2) };
    let d = shape.input_dim;
    let t = rng.gen_range(1..=8);
    let horizon = rng.gen_range(1..=4);
    let verbs = rng.gen_range(1..=4);
    let gamma = rng.gen_range(0.5..=1.0);
    let p = EncoderParams::init(shape, &mut rng);
    let x: Vec<f64> = (0..t * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let future: Vec<f64> = (0..horizon * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let labels: Vec<Option<bool>> = (0..verbs).map(|k| if k == 0 { Some(rng.gen()) } else { [None, Some(true), Some(false)][rng.gen_range(0..3)] }).collect();
    let target: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let cls = Dense::init(shape.hidden, verbs, &mut rng);
    let reg = Dense::init(shape.hidden, 3, &mut rng);
    let n = p.theta.len();
    let eps = 1e-5;

    let (_, g) = pretrain_example(&p, &x, &future, gamma, false);
    let num = numeric_gradient(&p.theta, eps, |th| {
        pretrain_example(&EncoderParams { shape, theta: th.to_vec() }, &x, &future, gamma, false).0
    });
    let e_roll = max_relative_error(&g, &num);

    let head_err = |head: &Dense, loss: &dyn Fn(&EncoderParams, &Dense) -> (f64, Vec<f64>)| {
        let (_, g) = loss(&p, head);
        let mut all = p.theta.clone();
        all.extend_from_slice(&head.theta);
        let num = numeric_gradient(&all, eps, |th| {
            let q = EncoderParams { shape, theta: th[..n].to_vec() };
            let h = Dense { theta: th[n..].to_vec(), ..head.clone() };
            loss(&q, &h).0
        });
        max_relative_error(&g, &num)
    };
    let e_cls = head_err(&cls, &|q, h| {
        let (l, g, _) = classify_example(q, h, &x, &labels, true);
        (l, g)
    });
    let e_reg = head_err(&reg, &|q, h| {
        let (l, g, _) = probe_example(q, h, &x, &target, true);
        (l, g)
    });
    [e_roll, e_cls, e_reg]
}

/// AP from the definition: the rank of item i is one plus the number of items
/// that beat it (higher score, or equal score and earlier index). Each
/// positive contributes (positives at or above its rank) / rank, summed in
/// rank order.
pub fn exhaustive_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let beats = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let rank: Vec<usize> = (0..n).map(|i| 1 + (0..n).filter(|&j| j != i && beats(j, i)).count()).collect();
    let mut terms: Vec<(usize, f64)> = (0..n)
        .filter(|&i| labels[i])
        .map(|i| {
            let above = (0..n).filter(|&j| labels[j] && rank[j] <= rank[i]).count();
            (rank[i], above as f64 / rank[i] as f64)
        })
        .collect();
    terms.sort_by_key(|t| t.0);
    let total = terms.iter().fold(0.0, |acc, t| acc + t.1);
    total / terms.len() as f64
}

/// Two-sided 95% Student-t quantiles for 1..=6 degrees of freedom.
pub const T975: [f64; 6] = [12.706204736, 4.302652730, 3.182446305, 2.776445105, 2.570581836, 2.446911851];

/// Mean and two-sided 95% Student-t interval of `xs` (2 to 7 samples).
pub fn t_interval(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let half = T975[xs.len() - 2] * sd / n.sqrt();
    (mean, mean - half, mean + half)
}

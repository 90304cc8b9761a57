//! Encoder numerics: gradients, a hand-evaluated LSTM, stability,
//! reproducibility and causality.

mod common;

use proptest::prelude::*;
use rand::Rng;
use trajverb::nn::{
    bce_multilabel, batch_gradients, classify_example, discounted_mse, encode, pretrain_example, rollout, sigmoid,
    softplus, Adam, Dense, EncoderParams, EncoderShape, Tensor2,
};
use trajverb::rng::rng_from;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn analytic_gradients_match_central_differences(seed in any::<u64>()) {
        let errs = common::gradient_errors(seed);
        for (path, e) in ["rollout", "classify", "probe"].iter().zip(errs) {
            prop_assert!(e < 1e-4, "{} path: relative error {}", path, e);
        }
    }

    #[test]
    fn perturbing_a_row_leaves_earlier_states_alone(seed in any::<u64>(), t in 0usize..10, scale in -3.0f64..3.0) {
        let mut rng = rng_from(seed);
        let p = EncoderParams::init(EncoderShape::new(3, 5), &mut rng);
        let x = Tensor2::from_vec(10, 3, (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mut y = x.clone();
        y.row_mut(t).iter_mut().for_each(|v| *v = *v * scale + 0.5);
        let (a, b) = (encode(&p, &x).unwrap(), encode(&p, &y).unwrap());
        for s in 0..t {
            prop_assert_eq!(a.hidden.row(s), b.hidden.row(s));
        }
    }

    #[test]
    fn large_inputs_and_logits_stay_finite(seed in any::<u64>()) {
        let mut rng = rng_from(seed);
        let shape = EncoderShape::new(4, 6);
        let mut p = EncoderParams::init(shape, &mut rng);
        p.theta.iter_mut().for_each(|w| *w *= 5.0);
        let x: Vec<f64> = (0..8 * 4).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..4 * 4).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let (l, g) = pretrain_example(&p, &x, &y, 0.9, false);
        prop_assert!(l.is_finite() && g.iter().all(|v| v.is_finite()));
        let head = Dense { theta: (0..6 * 3 + 3).map(|_| rng.gen_range(-10.0..10.0)).collect(), ..Dense::zeros(6, 3) };
        let (l, g, z) = classify_example(&p, &head, &x, &[Some(true), Some(false), Some(true)], true);
        prop_assert!(l.is_finite() && g.iter().all(|v| v.is_finite()));
        prop_assert!(z.iter().all(|v| v.is_finite()));
        let logits: Vec<f64> = (0..5).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let labels: Vec<bool> = (0..5).map(|_| rng.gen()).collect();
        let (l, g) = bce_multilabel(&logits, &labels);
        prop_assert!(l.is_finite() && l >= 0.0 && g.iter().all(|v| v.is_finite()));
    }
}

fn set(p: &mut EncoderParams, name: &str, values: &[f64]) {
    p.block_mut(name).unwrap().copy_from_slice(values);
}

/// h = 2, d = 1, hand-set weights, three input steps, evaluated against the
/// textbook equations written out one scalar at a time.
#[test]
fn hand_set_lstm_matches_manual_evaluation() {
    let shape = EncoderShape { input_dim: 1, hidden: 2, ff_layers: 1 };
    let mut p = EncoderParams::zeros(shape);
    set(&mut p, "ff0.weight", &[0.5, -0.3]);
    set(&mut p, "ff0.bias", &[0.1, 0.2]);
    // rows: i0 i1 f0 f1 g0 g1 o0 o1; columns: a0 a1 h0 h1
    #[rustfmt::skip]
    let w = [
        0.2, -0.1, 0.3, 0.05,
        -0.4, 0.6, 0.1, -0.2,
        0.7, 0.2, -0.3, 0.4,
        0.1, 0.1, 0.2, 0.3,
        -0.5, 0.3, 0.6, -0.1,
        0.4, -0.6, 0.2, 0.5,
        0.3, 0.3, -0.2, 0.1,
        -0.1, 0.5, 0.4, -0.3,
    ];
    set(&mut p, "lstm.weight", &w);
    let b = [0.01, -0.02, 1.0, 0.9, 0.03, -0.04, 0.05, 0.06];
    set(&mut p, "lstm.bias", &b);
    let xs = [0.7, -1.2, 0.25];

    let row = |r: usize, a0: f64, a1: f64, h0: f64, h1: f64| {
        w[4 * r] * a0 + w[4 * r + 1] * a1 + w[4 * r + 2] * h0 + w[4 * r + 3] * h1 + b[r]
    };
    let (mut h0, mut h1, mut c0, mut c1) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut expected = Vec::new();
    for x in xs {
        let a0 = (0.5 * x + 0.1f64).tanh();
        let a1 = (-0.3 * x + 0.2f64).tanh();
        let i0 = sigmoid(row(0, a0, a1, h0, h1));
        let i1 = sigmoid(row(1, a0, a1, h0, h1));
        let f0 = sigmoid(row(2, a0, a1, h0, h1));
        let f1 = sigmoid(row(3, a0, a1, h0, h1));
        let g0 = row(4, a0, a1, h0, h1).tanh();
        let g1 = row(5, a0, a1, h0, h1).tanh();
        let o0 = sigmoid(row(6, a0, a1, h0, h1));
        let o1 = sigmoid(row(7, a0, a1, h0, h1));
        c0 = f0 * c0 + i0 * g0;
        c1 = f1 * c1 + i1 * g1;
        h0 = o0 * c0.tanh();
        h1 = o1 * c1.tanh();
        expected.push([h0, h1]);
    }
    let enc = encode(&p, &Tensor2::from_vec(3, 1, xs.to_vec()).unwrap()).unwrap();
    for (t, e) in expected.iter().enumerate() {
        for k in 0..2 {
            assert!((enc.hidden.row(t)[k] - e[k]).abs() < 1e-12, "step {t} unit {k}");
        }
    }
    assert!((enc.c[0] - c0).abs() < 1e-12 && (enc.c[1] - c1).abs() < 1e-12);
}

#[test]
fn loss_examples() {
    let (l, _) = discounted_mse(&[1.0, 2.0f64.sqrt()], &[0.0, 0.0], 1, 0.5);
    assert!((l - (1.0 + 0.5 * 2.0) / 1.5).abs() < 1e-12);
    let (l, g) = bce_multilabel(&[1.0, -1.0], &[true, false]);
    assert!((l - softplus(-1.0)).abs() < 1e-12 && (l - 0.31326).abs() < 1e-5);
    assert!((g[0] - (sigmoid(1.0) - 1.0) / 2.0).abs() < 1e-12);
    let (l, _) = bce_multilabel(&[0.0, 0.0], &[true, false]);
    assert!((l - 2f64.ln()).abs() < 1e-15);
    let (l, _) = bce_multilabel(&[20.0], &[true]);
    assert!(l < 1e-8);
}

/// Same seed, data and hyperparameters give bit-identical parameters after
/// several Adam steps, whatever the worker count.
#[test]
fn training_steps_are_reproducible() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut rng = rng_from(3);
            let shape = EncoderShape::new(3, 4);
            let mut p = EncoderParams::init(shape, &mut rng);
            let data: Vec<(Vec<f64>, Vec<f64>)> = (0..12)
                .map(|_| ((0..18).map(|_| rng.gen_range(-1.0..1.0)).collect(), (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()))
                .collect();
            let mut adam = Adam::new(p.theta.len(), 1e-2);
            for _ in 0..5 {
                let (_, g) = batch_gradients(data.len(), |k| pretrain_example(&p, &data[k].0, &data[k].1, 0.9, false));
                adam.update(&mut p.theta, &g);
            }
            p
        })
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(3));
}

#[test]
fn zero_weights_roll_out_the_decoder_bias() {
    let mut p = EncoderParams::zeros(EncoderShape::new(2, 3));
    set(&mut p, "decoder.bias", &[0.25, -0.75]);
    let x = Tensor2::from_vec(90, 2, vec![0.3; 180]).unwrap();
    assert!(encode(&p, &x).unwrap().hidden.data.iter().all(|&v| v == 0.0));
    let r = rollout(&p, &x, 60).unwrap();
    assert!((0..60).all(|t| r.row(t) == [0.25, -0.75]));
}

//! Feed-forward + LSTM encoder, decoder rollout and heads over flat
//! parameter vectors.
//!
//! Encoder parameter order (all row-major):
//! for each feed-forward layer `W (h x in)`, `b (h)`; then the LSTM
//! `W (4h x 2h)` acting on `[a; h_prev]` with gate rows ordered
//! input, forget, cell, output, and `b (4h)`; then the decoder
//! `W (d x h)`, `b (d)`.

use super::linalg::{matvec_add, matvec_t_add, outer_add};
use super::loss::{bce_masked, discounted_mse, mse, sigmoid};
use super::{NnError, Tensor2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ops::Range;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncoderShape {
    pub input_dim: usize,
    pub hidden: usize,
    pub ff_layers: usize,
}

/// A named slice of a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub range: Range<usize>,
}

impl EncoderShape {
    pub fn new(input_dim: usize, hidden: usize) -> Self {
        Self { input_dim, hidden, ff_layers: 1 }
    }

    fn ff_in(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.hidden
        }
    }

    pub fn blocks(&self) -> Vec<Block> {
        let (d, h) = (self.input_dim, self.hidden);
        let mut sizes: Vec<(String, usize)> = Vec::new();
        for l in 0..self.ff_layers {
            sizes.push((format!("ff{l}.weight"), h * self.ff_in(l)));
            sizes.push((format!("ff{l}.bias"), h));
        }
        sizes.push(("lstm.weight".into(), 4 * h * 2 * h));
        sizes.push(("lstm.bias".into(), 4 * h));
        sizes.push(("decoder.weight".into(), d * h));
        sizes.push(("decoder.bias".into(), d));
        let mut off = 0;
        sizes
            .into_iter()
            .map(|(name, n)| {
                let b = Block { name, range: off..off + n };
                off += n;
                b
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.blocks().last().map_or(0, |b| b.range.end)
    }

    fn layout(&self) -> Layout {
        let b = self.blocks();
        let l = self.ff_layers;
        Layout {
            ff: (0..l).map(|i| (b[2 * i].range.clone(), b[2 * i + 1].range.clone())).collect(),
            lstm_w: b[2 * l].range.clone(),
            lstm_b: b[2 * l + 1].range.clone(),
            dec_w: b[2 * l + 2].range.clone(),
            dec_b: b[2 * l + 3].range.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 || self.hidden == 0 || self.ff_layers == 0 {
            return Err(NnError::Shape(format!("degenerate encoder shape {self:?}")));
        }
        Ok(())
    }
}

struct Layout {
    ff: Vec<(Range<usize>, Range<usize>)>,
    lstm_w: Range<usize>,
    lstm_b: Range<usize>,
    dec_w: Range<usize>,
    dec_b: Range<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub shape: EncoderShape,
    pub theta: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(shape: EncoderShape) -> Self {
        Self { shape, theta: vec![0.0; shape.param_count()] }
    }

    /// Uniform `+-1/sqrt(fan_in)` weights, zero biases, forget bias 1.
    pub fn init<R: Rng>(shape: EncoderShape, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        let lay = shape.layout();
        let h = shape.hidden;
        for (l, (w, _)) in lay.ff.iter().enumerate() {
            fill_uniform(&mut p.theta[w.clone()], shape.ff_in(l), rng);
        }
        fill_uniform(&mut p.theta[lay.lstm_w.clone()], h, rng);
        p.theta[lay.lstm_b.start + h..lay.lstm_b.start + 2 * h].fill(1.0);
        fill_uniform(&mut p.theta[lay.dec_w.clone()], h, rng);
        p
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.shape.blocks().into_iter().find(|b| b.name == name).map(|b| &self.theta[b.range])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.shape.blocks().into_iter().find(|b| b.name == name)?.range;
        Some(&mut self.theta[r])
    }

    /// Name the first parameter block holding a non-finite gradient.
    pub fn check_gradient(&self, grad: &[f64]) -> Result<(), NnError> {
        for b in self.shape.blocks() {
            if grad[b.range].iter().any(|g| !g.is_finite()) {
                return Err(NnError::NonFiniteGradient { block: b.name });
            }
        }
        Ok(())
    }
}

fn fill_uniform<R: Rng>(w: &mut [f64], fan_in: usize, rng: &mut R) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for x in w {
        *x = rng.gen_range(-bound..bound);
    }
}

/// Affine layer `y = W x + b`, parameters `W (out x in)` then `b (out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub theta: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, theta: vec![0.0; inputs * outputs + outputs] }
    }

    pub fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut d = Self::zeros(inputs, outputs);
        fill_uniform(&mut d.theta[..inputs * outputs], inputs, rng);
        d
    }

    pub fn weight(&self) -> &[f64] {
        &self.theta[..self.inputs * self.outputs]
    }

    pub fn bias(&self) -> &[f64] {
        &self.theta[self.inputs * self.outputs..]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias().to_vec();
        matvec_add(self.weight(), x, &mut y);
        y
    }

    /// Accumulate parameter gradients into `grad`, return `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (gw, gb) = grad.split_at_mut(self.inputs * self.outputs);
        outer_add(gw, dy, x);
        for (g, d) in gb.iter_mut().zip(dy) {
            *g += d;
        }
        let mut dx = vec![0.0; self.inputs];
        matvec_t_add(self.weight(), dy, &mut dx);
        dx
    }
}

/// Activations of one recurrent step, kept for the backward pass.
struct Step {
    input: Vec<f64>,
    /// Post-tanh output of each feed-forward layer.
    acts: Vec<Vec<f64>>,
    /// Activated gates `[i, f, g, o]`.
    gates: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    c: Vec<f64>,
}

struct Trace {
    steps: Vec<Step>,
    inputs: usize,
    /// `horizon x d` predictions.
    preds: Vec<f64>,
}

fn step(p: &EncoderParams, lay: &Layout, input: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Step {
    let h = p.shape.hidden;
    let mut acts = Vec::with_capacity(lay.ff.len());
    let mut a: &[f64] = input;
    for (w, b) in &lay.ff {
        let mut y = p.theta[b.clone()].to_vec();
        matvec_add(&p.theta[w.clone()], a, &mut y);
        y.iter_mut().for_each(|v| *v = v.tanh());
        acts.push(y);
        a = acts.last().expect("pushed");
    }
    let mut cat = Vec::with_capacity(2 * h);
    cat.extend_from_slice(a);
    cat.extend_from_slice(h_prev);
    let mut z = p.theta[lay.lstm_b.clone()].to_vec();
    matvec_add(&p.theta[lay.lstm_w.clone()], &cat, &mut z);
    for (k, v) in z.iter_mut().enumerate() {
        *v = if (2 * h..3 * h).contains(&k) { v.tanh() } else { sigmoid(*v) };
    }
    let mut c = vec![0.0; h];
    let mut tanh_c = vec![0.0; h];
    let mut hn = vec![0.0; h];
    for k in 0..h {
        let (i, f, g, o) = (z[k], z[h + k], z[2 * h + k], z[3 * h + k]);
        c[k] = f * c_prev[k] + i * g;
        tanh_c[k] = c[k].tanh();
        hn[k] = o * tanh_c[k];
    }
    Step { input: input.to_vec(), acts, gates: z, h_prev: h_prev.to_vec(), c_prev: c_prev.to_vec(), tanh_c, h: hn, c }
}

fn decode(p: &EncoderParams, lay: &Layout, h: &[f64]) -> Vec<f64> {
    let mut y = p.theta[lay.dec_b.clone()].to_vec();
    matvec_add(&p.theta[lay.dec_w.clone()], h, &mut y);
    y
}

/// Run the input rows, then roll out `horizon` predictions. With `teacher`,
/// step `k` consumes true future row `k - 1` instead of prediction `k - 1`.
fn forward(p: &EncoderParams, x: &[f64], horizon: usize, teacher: Option<&[f64]>) -> Trace {
    let (d, h) = (p.shape.input_dim, p.shape.hidden);
    let lay = p.shape.layout();
    let n = x.len() / d;
    let mut steps: Vec<Step> = Vec::with_capacity(n + horizon);
    let zero = vec![0.0; h];
    for t in 0..n {
        let (hp, cp) = steps.last().map_or((&zero, &zero), |s| (&s.h, &s.c));
        let s = step(p, &lay, &x[t * d..(t + 1) * d], hp, cp);
        steps.push(s);
    }
    let mut preds = Vec::with_capacity(horizon * d);
    for k in 0..horizon {
        if k > 0 {
            let input = match teacher {
                Some(f) => f[(k - 1) * d..k * d].to_vec(),
                None => preds[(k - 1) * d..k * d].to_vec(),
            };
            let last = steps.last().expect("at least one input row");
            let s = step(p, &lay, &input, &last.h, &last.c);
            steps.push(s);
        }
        let y = decode(p, &lay, &steps.last().expect("at least one input row").h);
        preds.extend_from_slice(&y);
    }
    Trace { steps, inputs: n, preds }
}

/// Backpropagate through the trace. `dpred` is the loss gradient for each
/// prediction, `dh_last` an extra gradient on the last input step's hidden
/// state. Accumulates into `grad`.
fn backward(
    p: &EncoderParams,
    trace: &Trace,
    dpred: Option<&[f64]>,
    dh_last: Option<&[f64]>,
    closed_loop: bool,
    grad: &mut [f64],
) {
    let (d, h) = (p.shape.input_dim, p.shape.hidden);
    let lay = p.shape.layout();
    let n = trace.inputs;
    let horizon = trace.preds.len() / d;
    let mut dpred: Vec<f64> = dpred.map_or_else(Vec::new, |g| g.to_vec());
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    for s in (0..trace.steps.len()).rev() {
        let st = &trace.steps[s];
        let mut dh = std::mem::take(&mut dh_next);
        if s + 1 == n {
            if let Some(g) = dh_last {
                dh.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
        if !dpred.is_empty() && s + 1 >= n && s + 1 - n < horizon {
            let pi = s + 1 - n;
            let dp = &dpred[pi * d..(pi + 1) * d];
            outer_add(&mut grad[lay.dec_w.clone()], dp, &st.h);
            grad[lay.dec_b.clone()].iter_mut().zip(dp).for_each(|(g, v)| *g += v);
            matvec_t_add(&p.theta[lay.dec_w.clone()], dp, &mut dh);
        }

        let mut dz = vec![0.0; 4 * h];
        let mut dc_prev = vec![0.0; h];
        for k in 0..h {
            let (i, f, g, o) = (st.gates[k], st.gates[h + k], st.gates[2 * h + k], st.gates[3 * h + k]);
            let tc = st.tanh_c[k];
            let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
            dz[k] = dc * g * i * (1.0 - i);
            dz[h + k] = dc * st.c_prev[k] * f * (1.0 - f);
            dz[2 * h + k] = dc * i * (1.0 - g * g);
            dz[3 * h + k] = dh[k] * tc * o * (1.0 - o);
            dc_prev[k] = dc * f;
        }
        let a = st.acts.last().expect("at least one ff layer");
        let mut cat = Vec::with_capacity(2 * h);
        cat.extend_from_slice(a);
        cat.extend_from_slice(&st.h_prev);
        outer_add(&mut grad[lay.lstm_w.clone()], &dz, &cat);
        grad[lay.lstm_b.clone()].iter_mut().zip(&dz).for_each(|(g, v)| *g += v);
        let mut dcat = vec![0.0; 2 * h];
        matvec_t_add(&p.theta[lay.lstm_w.clone()], &dz, &mut dcat);
        dh_next = dcat[h..].to_vec();
        dc_next = dc_prev;

        let mut da = dcat[..h].to_vec();
        let need_input = closed_loop && s >= n;
        for l in (0..lay.ff.len()).rev() {
            let out = &st.acts[l];
            let x_in: &[f64] = if l == 0 { &st.input } else { &st.acts[l - 1] };
            let dpre: Vec<f64> = da.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect();
            let (w, b) = &lay.ff[l];
            outer_add(&mut grad[w.clone()], &dpre, x_in);
            grad[b.clone()].iter_mut().zip(&dpre).for_each(|(g, v)| *g += v);
            if l > 0 || need_input {
                let mut dx = vec![0.0; x_in.len()];
                matvec_t_add(&p.theta[w.clone()], &dpre, &mut dx);
                da = dx;
            }
        }
        if need_input {
            let pi = s - n;
            dpred[pi * d..(pi + 1) * d].iter_mut().zip(&da).for_each(|(g, v)| *g += v);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    /// One row per input step, `T x h`.
    pub hidden: Tensor2,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

fn check_input(p: &EncoderParams, x: &Tensor2) -> Result<(), NnError> {
    if x.cols != p.shape.input_dim {
        return Err(NnError::Shape(format!("input has {} columns, encoder expects {}", x.cols, p.shape.input_dim)));
    }
    if x.rows == 0 {
        return Err(NnError::Shape("empty input".into()));
    }
    Ok(())
}

pub fn encode(p: &EncoderParams, x: &Tensor2) -> Result<Encoded, NnError> {
    check_input(p, x)?;
    let trace = forward(p, &x.data, 0, None);
    let h = p.shape.hidden;
    let mut hidden = Tensor2::zeros(x.rows, h);
    for (t, s) in trace.steps.iter().enumerate() {
        hidden.row_mut(t).copy_from_slice(&s.h);
    }
    let last = trace.steps.last().expect("non-empty input");
    Ok(Encoded { hidden, h: last.h.clone(), c: last.c.clone() })
}

/// Closed-loop rollout: each prediction is fed back as the next input.
pub fn rollout(p: &EncoderParams, x: &Tensor2, horizon: usize) -> Result<Tensor2, NnError> {
    check_input(p, x)?;
    Tensor2::from_vec(horizon, x.cols, forward(p, &x.data, horizon, None).preds)
}

/// Teacher-forced rollout: true future rows are fed instead of predictions.
pub fn rollout_teacher(p: &EncoderParams, x: &Tensor2, future: &Tensor2, horizon: usize) -> Result<Tensor2, NnError> {
    check_input(p, x)?;
    if future.cols != x.cols || future.rows + 1 < horizon {
        return Err(NnError::Shape("future rows do not cover the horizon".into()));
    }
    Tensor2::from_vec(horizon, x.cols, forward(p, &x.data, horizon, Some(&future.data)).preds)
}

/// Discounted-MSE prediction loss and its gradient for one clip.
pub fn pretrain_example(p: &EncoderParams, x: &[f64], target: &[f64], gamma: f64, teacher_forcing: bool) -> (f64, Vec<f64>) {
    let d = p.shape.input_dim;
    let horizon = target.len() / d;
    let trace = forward(p, x, horizon, teacher_forcing.then_some(target));
    let (loss, dpred) = discounted_mse(&trace.preds, target, d, gamma);
    let mut grad = vec![0.0; p.theta.len()];
    backward(p, &trace, Some(&dpred), None, !teacher_forcing, &mut grad);
    (loss, grad)
}

/// Forward-only [`pretrain_example`] loss.
pub fn pretrain_loss(p: &EncoderParams, x: &[f64], target: &[f64], gamma: f64, teacher_forcing: bool) -> f64 {
    let d = p.shape.input_dim;
    let trace = forward(p, x, target.len() / d, teacher_forcing.then_some(target));
    discounted_mse(&trace.preds, target, d, gamma).0
}

/// Hidden state after the last input row.
pub fn final_hidden(p: &EncoderParams, x: &[f64]) -> Vec<f64> {
    let trace = forward(p, x, 0, None);
    trace.steps.last().map_or_else(|| vec![0.0; p.shape.hidden], |s| s.h.clone())
}

fn head_example(
    p: &EncoderParams,
    head: &Dense,
    x: &[f64],
    train_encoder: bool,
    loss: impl Fn(&[f64]) -> (f64, Vec<f64>),
) -> (f64, Vec<f64>, Vec<f64>) {
    let trace = forward(p, x, 0, None);
    let hl = &trace.steps.last().expect("non-empty input").h;
    let out = head.forward(hl);
    let (l, dout) = loss(&out);
    let enc_len = if train_encoder { p.theta.len() } else { 0 };
    let mut grad = vec![0.0; enc_len + head.theta.len()];
    let dh = head.backward(hl, &dout, &mut grad[enc_len..]);
    if train_encoder {
        backward(p, &trace, None, Some(&dh), false, &mut grad[..enc_len]);
    }
    (l, grad, out)
}

/// Masked multi-label BCE through encoder and head. Returns the loss, the
/// gradient (encoder block when trained, then the head block) and the logits.
pub fn classify_example(
    p: &EncoderParams,
    head: &Dense,
    x: &[f64],
    labels: &[Option<bool>],
    train_encoder: bool,
) -> (f64, Vec<f64>, Vec<f64>) {
    head_example(p, head, x, train_encoder, |z| bce_masked(z, labels))
}

/// MSE regression through encoder and head, same gradient layout as
/// [`classify_example`].
pub fn probe_example(
    p: &EncoderParams,
    head: &Dense,
    x: &[f64],
    target: &[f64],
    train_encoder: bool,
) -> (f64, Vec<f64>, Vec<f64>) {
    head_example(p, head, x, train_encoder, |y| mse(y, target))
}

/// Mean loss and gradient over `n` examples, computed in parallel and summed
/// in index order so the result does not depend on the worker count.
pub fn batch_gradients<F>(n: usize, f: F) -> (f64, Vec<f64>)
where
    F: Fn(usize) -> (f64, Vec<f64>) + Sync,
{
    let parts: Vec<(f64, Vec<f64>)> = (0..n).into_par_iter().map(&f).collect();
    let mut loss = 0.0;
    let mut grad: Vec<f64> = Vec::new();
    for (l, g) in parts {
        loss += l;
        if grad.is_empty() {
            grad = g;
        } else {
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
    }
    let scale = 1.0 / n.max(1) as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    (loss * scale, grad)
}

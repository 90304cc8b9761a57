//! Scalar losses, each returning the loss and its gradient.

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean squared error per row, weighted by `gamma^(t-1)` and normalized by
/// the weight sum. Returns `(loss, dloss/dpred)`.
pub fn discounted_mse(pred: &[f64], target: &[f64], dim: usize, gamma: f64) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len(), "prediction and target shapes differ");
    let steps = pred.len() / dim;
    let weights: Vec<f64> = (0..steps).scan(1.0, |w, _| {
        let cur = *w;
        *w *= gamma;
        Some(cur)
    })
    .collect();
    let total: f64 = weights.iter().sum();
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for t in 0..steps {
        let scale = weights[t] / total;
        let mut row = 0.0;
        for j in t * dim..(t + 1) * dim {
            let e = pred[j] - target[j];
            row += e * e;
            grad[j] = 2.0 * scale * e / dim as f64;
        }
        loss += scale * row / dim as f64;
    }
    (loss, grad)
}

/// Mean binary cross-entropy over labels, in softplus form.
pub fn bce_multilabel(logits: &[f64], labels: &[bool]) -> (f64, Vec<f64>) {
    let mask: Vec<Option<bool>> = labels.iter().map(|&l| Some(l)).collect();
    bce_masked(logits, &mask)
}

/// [`bce_multilabel`] averaged over the labels that are present.
pub fn bce_masked(logits: &[f64], labels: &[Option<bool>]) -> (f64, Vec<f64>) {
    assert_eq!(logits.len(), labels.len(), "logit and label counts differ");
    let m = labels.iter().filter(|l| l.is_some()).count().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (k, (&z, l)) in logits.iter().zip(labels).enumerate() {
        if let Some(y) = *l {
            let y = y as u8 as f64;
            loss += softplus(z) - y * z;
            grad[k] = (sigmoid(z) - y) / m;
        }
    }
    (loss / m, grad)
}

/// Plain mean squared error.
pub fn mse(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len(), "prediction and target shapes differ");
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            loss += (p - t) * (p - t);
            2.0 * (p - t) / n
        })
        .collect();
    (loss / n, grad)
}

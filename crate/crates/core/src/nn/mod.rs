//! Dense layers, an LSTM encoder with closed-loop rollout, exact
//! backpropagation through time, losses, Adam and checkpoints. All math is
//! `f64` and single-threaded per example; batches reduce in index order.

mod adam;
mod checkpoint;
mod linalg;
mod loss;
mod model;

pub use adam::Adam;
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use loss::{bce_masked, bce_multilabel, discounted_mse, mse, sigmoid, softplus};
pub use model::{
    batch_gradients, classify_example, encode, final_hidden, pretrain_example, pretrain_loss, probe_example, rollout, rollout_teacher, Block,
    Dense, Encoded, EncoderParams, EncoderShape,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient in {block}")]
    NonFiniteGradient { block: String },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != rows * cols {
            return Err(NnError::Shape(format!("{} values for {rows}x{cols}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("tensor".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_f32(rows: usize, cols: usize, data: &[f32]) -> Result<Self, NnError> {
        Self::from_vec(rows, cols, data.iter().map(|&x| x as f64).collect())
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

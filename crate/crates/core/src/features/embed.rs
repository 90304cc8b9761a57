//! Frozen random image embedding: `tanh(W x + b)`.

use super::camera::Raster;
use crate::rng::rng_from;
use rand_distr::{Distribution, Normal};

pub const EMBED_DIM: usize = 64;
pub const EMBED_SEED: u64 = 0xFEA7;

#[derive(Clone, Debug, PartialEq)]
pub struct FrozenMap {
    input_len: usize,
    /// `EMBED_DIM x input_len`, row-major.
    w: Vec<f64>,
    b: Vec<f64>,
}

impl FrozenMap {
    /// Weights drawn once from `N(0, 1/sqrt(input_len))` with the fixed seed.
    pub fn new(input_len: usize) -> Self {
        let mut rng = rng_from(EMBED_SEED);
        let dist = Normal::new(0.0, 1.0 / (input_len as f64).sqrt()).expect("positive std");
        let w = (0..EMBED_DIM * input_len).map(|_| dist.sample(&mut rng)).collect();
        let b = (0..EMBED_DIM).map(|_| dist.sample(&mut rng)).collect();
        Self { input_len, w, b }
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    /// Column `j` of `W`, for Lipschitz bounds.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..EMBED_DIM).map(|i| self.w[i * self.input_len + j]).collect()
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    pub fn embed(&self, raster: &Raster) -> Result<[f64; EMBED_DIM], String> {
        if raster.pixels.len() != self.input_len {
            return Err(format!("raster has {} pixels, map expects {}", raster.pixels.len(), self.input_len));
        }
        let mut out = [0.0; EMBED_DIM];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.w[i * self.input_len..(i + 1) * self.input_len];
            let s: f64 = row.iter().zip(&raster.pixels).map(|(a, b)| a * b).sum();
            *o = (s + self.b[i]).tanh();
        }
        Ok(out)
    }
}

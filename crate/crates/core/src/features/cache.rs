//! Normalized per-clip windows (90 input + 60 future rows) stored as f32.
//!
//! File layout, little-endian:
//! `b"TVFC1"`, kind `u8`, dim `u32`, clip count `u64`, key `u64`,
//! then `count` clip refs (`u64` seed, `u32` start),
//! then `count * 150 * dim` `f32` values, row-major per clip.

use super::{window_rows, FeatureError, FrameParts, Modality, Normalizer};
use crate::oracle::{ClipRef, CLIP_FRAMES, WINDOW_FRAMES};
use std::collections::HashMap;
use std::io::{Read, Write};

const MAGIC: &[u8; 5] = b"TVFC1";

#[derive(Clone, Debug, PartialEq)]
pub struct ClipFeatures {
    pub modality: Modality,
    pub dim: usize,
    /// Caller-defined cache key (hash of dataset, camera and normalizer).
    pub key: u64,
    pub clips: Vec<ClipRef>,
    data: Vec<f32>,
    index: HashMap<ClipRef, usize>,
}

impl ClipFeatures {
    /// Slice normalized windows out of per-episode frame parts.
    /// `episodes` pairs each episode seed with its frame parts.
    pub fn build(
        episodes: &[(u64, &[FrameParts])],
        clips: &[ClipRef],
        norm: &Normalizer,
        key: u64,
    ) -> Result<ClipFeatures, FeatureError> {
        let modality = norm.modality;
        let dim = modality.dim();
        let by_seed: HashMap<u64, &[FrameParts]> = episodes.iter().copied().collect();
        let mut data = Vec::with_capacity(clips.len() * WINDOW_FRAMES * dim);
        for c in clips {
            let parts = by_seed
                .get(&c.episode_seed)
                .ok_or_else(|| FeatureError::Cache(format!("episode {} not available", c.episode_seed)))?;
            let s = c.start_frame as usize;
            let window = parts
                .get(s..s + WINDOW_FRAMES)
                .ok_or_else(|| FeatureError::Cache(format!("clip {c:?} runs past its episode")))?;
            let mut rows = window_rows(window, modality);
            norm.apply(&mut rows);
            data.extend(rows.iter().map(|&x| x as f32));
        }
        Ok(Self::from_parts(modality, key, clips.to_vec(), data))
    }

    /// Wrap already normalized windows, `clips.len() * 150 * dim` values.
    pub fn from_windows(modality: Modality, key: u64, clips: Vec<ClipRef>, data: Vec<f32>) -> Result<Self, FeatureError> {
        if data.len() != clips.len() * WINDOW_FRAMES * modality.dim() {
            return Err(FeatureError::Cache(format!("{} values for {} clips of {modality}", data.len(), clips.len())));
        }
        Ok(Self::from_parts(modality, key, clips, data))
    }

    fn from_parts(modality: Modality, key: u64, clips: Vec<ClipRef>, data: Vec<f32>) -> Self {
        let index = clips.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Self { modality, dim: modality.dim(), key, clips, data, index }
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn position(&self, clip: &ClipRef) -> Option<usize> {
        self.index.get(clip).copied()
    }

    pub fn window(&self, i: usize) -> &[f32] {
        let n = WINDOW_FRAMES * self.dim;
        &self.data[i * n..(i + 1) * n]
    }

    /// The 90 x d model input.
    pub fn input(&self, i: usize) -> &[f32] {
        &self.window(i)[..CLIP_FRAMES * self.dim]
    }

    /// The 60 x d prediction target.
    pub fn future(&self, i: usize) -> &[f32] {
        &self.window(i)[CLIP_FRAMES * self.dim..]
    }
}

pub fn write_cache<W: Write>(f: &ClipFeatures, mut w: W) -> Result<(), FeatureError> {
    w.write_all(MAGIC)?;
    w.write_all(&[f.modality.code()])?;
    w.write_all(&(f.dim as u32).to_le_bytes())?;
    w.write_all(&(f.clips.len() as u64).to_le_bytes())?;
    w.write_all(&f.key.to_le_bytes())?;
    for c in &f.clips {
        w.write_all(&c.episode_seed.to_le_bytes())?;
        w.write_all(&c.start_frame.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(f.data.len() * 4);
    for x in &f.data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_cache<R: Read>(mut r: R) -> Result<ClipFeatures, FeatureError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = bytes.as_slice();
    let mut take = |n: usize| -> Result<&[u8], FeatureError> {
        if cur.len() < n {
            return Err(FeatureError::Cache("truncated file".into()));
        }
        let (a, b) = cur.split_at(n);
        cur = b;
        Ok(a)
    };
    if take(5)? != MAGIC {
        return Err(FeatureError::Cache("bad magic".into()));
    }
    let kind = take(1)?[0];
    let modality = Modality::from_code(kind).ok_or_else(|| FeatureError::Cache(format!("bad modality code {kind}")))?;
    let dim = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
    if dim != modality.dim() {
        return Err(FeatureError::Cache(format!("dim {dim} does not match {modality}")));
    }
    let count = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
    let key = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    let mut clips = Vec::with_capacity(count);
    for _ in 0..count {
        let episode_seed = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let start_frame = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        clips.push(ClipRef { episode_seed, start_frame });
    }
    let n = count * WINDOW_FRAMES * dim;
    let raw = take(n * 4)?;
    let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
    if !cur.is_empty() {
        return Err(FeatureError::Cache("trailing bytes".into()));
    }
    Ok(ClipFeatures::from_parts(modality, key, clips, data))
}

//! Per-frame feature extraction for the five input conditions, z-score
//! normalization and the binary feature cache.

mod cache;
mod camera;
mod embed;

pub use cache::{read_cache, write_cache, ClipFeatures};
pub use camera::{
    occluded_fraction, project, rasterize, rasterize_with, Camera, CameraPoint, Raster, SceneLayers,
    BACKGROUND_INTENSITY, COUNTER_INTENSITY, HAND_INTENSITY, OBJECT_INTENSITY,
};
pub use embed::{FrozenMap, EMBED_DIM, EMBED_SEED};

use crate::oracle::{Clip, CLIP_FRAMES};
use crate::sim::{Frame, SceneConfig};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Normalizers need at least this many training clips.
pub const MIN_NORMALIZER_CLIPS: usize = 100;
pub const MIN_STD: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("normalizer needs at least {MIN_NORMALIZER_CLIPS} clips, got {0}")]
    TooFewClips(usize),
    #[error("normalizer was fit for {fit} but features are {requested}")]
    NormalizerMismatch { fit: Modality, requested: Modality },
    #[error("unknown modality `{0}`")]
    UnknownModality(String),
    #[error("feature cache: {0}")]
    Cache(String),
    #[error("feature cache io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Traj3D,
    Traj2D,
    Image2D,
    ImagePlusTraj2D,
    ImagePlusTraj3D,
}

impl Modality {
    pub const ALL: [Modality; 5] = [
        Modality::Traj3D,
        Modality::Traj2D,
        Modality::Image2D,
        Modality::ImagePlusTraj2D,
        Modality::ImagePlusTraj3D,
    ];

    pub fn dim(self) -> usize {
        match self {
            Modality::Traj3D => 10,
            Modality::Traj2D => 4,
            Modality::Image2D => EMBED_DIM,
            Modality::ImagePlusTraj2D => EMBED_DIM + 4,
            Modality::ImagePlusTraj3D => EMBED_DIM + 10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Traj3D => "Traj3D",
            Modality::Traj2D => "Traj2D",
            Modality::Image2D => "Image2D",
            Modality::ImagePlusTraj2D => "ImagePlusTraj2D",
            Modality::ImagePlusTraj3D => "ImagePlusTraj3D",
        }
    }

    /// Lowercase form used for directory names.
    pub fn slug(self) -> String {
        self.name().to_ascii_lowercase()
    }

    /// Human-readable row label for tables.
    pub fn label(self) -> &'static str {
        match self {
            Modality::Traj3D => "3D Trajectory",
            Modality::Traj2D => "2D Trajectory",
            Modality::Image2D => "2D Image",
            Modality::ImagePlusTraj2D => "2D Image + 2D Trajectory",
            Modality::ImagePlusTraj3D => "2D Image + 3D Trajectory",
        }
    }

    pub fn code(self) -> u8 {
        Modality::ALL.iter().position(|&m| m == self).expect("listed") as u8
    }

    pub fn from_code(code: u8) -> Option<Modality> {
        Modality::ALL.get(code as usize).copied()
    }

    pub fn uses_image(self) -> bool {
        !matches!(self, Modality::Traj3D | Modality::Traj2D)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = FeatureError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s || m.slug() == s)
            .ok_or_else(|| FeatureError::UnknownModality(s.to_string()))
    }
}

/// Everything any modality needs from one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameParts {
    pub traj3d: [f64; 10],
    /// In-frame projections of hand and object.
    pub hand_uv: Option<[f64; 2]>,
    pub obj_uv: Option<[f64; 2]>,
    /// Edge-clamped projections, used before any in-frame sighting.
    pub hand_uv_edge: [f64; 2],
    pub obj_uv_edge: [f64; 2],
    pub image: Option<[f64; EMBED_DIM]>,
}

/// Camera, frozen map and static raster layers shared by all featurization.
#[derive(Clone, Debug)]
pub struct Featurizer {
    camera: Camera,
    map: FrozenMap,
    layers: SceneLayers,
}

impl Featurizer {
    pub fn new(camera: Camera) -> Result<Self, FeatureError> {
        camera.validate().map_err(FeatureError::InvalidCamera)?;
        let map = FrozenMap::new(camera.image_width * camera.image_height);
        let layers = SceneLayers::new(&camera, &SceneConfig::default());
        Ok(Self { camera, map, layers })
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn map(&self) -> &FrozenMap {
        &self.map
    }

    pub fn rasterize(&self, frame: &Frame, scene: &SceneConfig) -> Raster {
        rasterize_with(&self.camera, &self.layers, frame, scene)
    }

    pub fn occluded_fraction(&self, frame: &Frame, scene: &SceneConfig) -> f64 {
        if self.layers_match(scene) {
            occluded_fraction(&self.camera, &self.layers, frame, scene)
        } else {
            occluded_fraction(&self.camera, &SceneLayers::new(&self.camera, scene), frame, scene)
        }
    }

    fn layers_match(&self, scene: &SceneConfig) -> bool {
        let d = SceneConfig::default();
        scene.counter_extent == d.counter_extent && scene.counter_height == d.counter_height
    }

    pub fn frame_parts(&self, frame: &Frame, scene: &SceneConfig, with_image: bool) -> FrameParts {
        let mut traj3d = [0.0; 10];
        traj3d[..3].copy_from_slice(&frame.hand_pos.to_array());
        traj3d[3..6].copy_from_slice(&frame.obj_pos.to_array());
        traj3d[6..].copy_from_slice(&frame.obj_rot.to_array());
        let edge = |p| {
            self.camera.project_unclipped(p).map(|[u, v]| [u.clamp(0.0, 1.0), v.clamp(0.0, 1.0)]).unwrap_or([0.5, 0.5])
        };
        let image = with_image.then(|| self.map.embed(&self.rasterize(frame, scene)).expect("map sized from camera"));
        FrameParts {
            traj3d,
            hand_uv: project(&self.camera, frame.hand_pos),
            obj_uv: project(&self.camera, frame.obj_pos),
            hand_uv_edge: edge(frame.hand_pos),
            obj_uv_edge: edge(frame.obj_pos),
            image,
        }
    }

    pub fn parts(&self, frames: &[Frame], scene: &SceneConfig, with_image: bool) -> Vec<FrameParts> {
        frames.iter().map(|f| self.frame_parts(f, scene, with_image)).collect()
    }

    /// Unnormalized clip input, 90 x d.
    pub fn raw_clip(&self, clip: &Clip<'_>, modality: Modality) -> Vec<f64> {
        window_rows(&self.parts(clip.frames, clip.config, modality.uses_image()), modality)
    }
}

/// Assemble rows for a window of consecutive frames. 2D coordinates that
/// leave the frame hold their last in-frame value within the window.
pub fn window_rows(parts: &[FrameParts], modality: Modality) -> Vec<f64> {
    let d = modality.dim();
    let mut out = Vec::with_capacity(parts.len() * d);
    let mut hand: Option<[f64; 2]> = None;
    let mut obj: Option<[f64; 2]> = None;
    for p in parts {
        hand = p.hand_uv.or(hand).or(Some(p.hand_uv_edge));
        obj = p.obj_uv.or(obj).or(Some(p.obj_uv_edge));
        let image = || p.image.as_ref().expect("image parts computed for image modality");
        match modality {
            Modality::Traj3D => out.extend_from_slice(&p.traj3d),
            Modality::Traj2D => {
                out.extend_from_slice(&hand.expect("set above"));
                out.extend_from_slice(&obj.expect("set above"));
            }
            Modality::Image2D => out.extend_from_slice(image()),
            Modality::ImagePlusTraj2D => {
                out.extend_from_slice(image());
                out.extend_from_slice(&hand.expect("set above"));
                out.extend_from_slice(&obj.expect("set above"));
            }
            Modality::ImagePlusTraj3D => {
                out.extend_from_slice(image());
                out.extend_from_slice(&p.traj3d);
            }
        }
    }
    out
}

/// A normalized clip input: exactly 90 rows of `modality.dim()` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub modality: Modality,
    pub rows: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }
}

/// Per-dimension z-score statistics from the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub modality: Modality,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Fit over flat row-major data (`values.len()` a multiple of the dim).
    pub fn fit_values<'a>(modality: Modality, chunks: impl Iterator<Item = &'a [f64]> + Clone) -> Normalizer {
        let d = modality.dim();
        let mut n = 0usize;
        let mut mean = vec![0.0; d];
        for chunk in chunks.clone() {
            for row in chunk.chunks_exact(d) {
                n += 1;
                for (m, x) in mean.iter_mut().zip(row) {
                    *m += x;
                }
            }
        }
        let n = n.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for chunk in chunks {
            for row in chunk.chunks_exact(d) {
                for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                    *v += (x - m) * (x - m);
                }
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(MIN_STD)).collect();
        Normalizer { modality, mean, std }
    }

    /// Z-score in place, then round through `f32` so cached and freshly
    /// computed features agree bit for bit.
    pub fn apply(&self, values: &mut [f64]) {
        let d = self.mean.len();
        for row in values.chunks_exact_mut(d) {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = ((*x - m) / s) as f32 as f64;
            }
        }
    }
}

/// Per-dimension mean and std over every input frame of the given clips.
pub fn fit_normalizer(clips: &[Clip<'_>], modality: Modality, featurizer: &Featurizer) -> Result<Normalizer, FeatureError> {
    if clips.len() < MIN_NORMALIZER_CLIPS {
        return Err(FeatureError::TooFewClips(clips.len()));
    }
    let raw: Vec<Vec<f64>> = clips.iter().map(|c| featurizer.raw_clip(c, modality)).collect();
    Ok(Normalizer::fit_values(modality, raw.iter().map(|v| v.as_slice())))
}

/// Normalized 90 x d features of one clip.
pub fn featurize(
    clip: &Clip<'_>,
    modality: Modality,
    featurizer: &Featurizer,
    norm: &Normalizer,
) -> Result<FeatureMatrix, FeatureError> {
    if norm.modality != modality || norm.mean.len() != modality.dim() {
        return Err(FeatureError::NormalizerMismatch { fit: norm.modality, requested: modality });
    }
    let mut values = featurizer.raw_clip(clip, modality);
    norm.apply(&mut values);
    Ok(FeatureMatrix { modality, rows: CLIP_FRAMES, dim: modality.dim(), values })
}

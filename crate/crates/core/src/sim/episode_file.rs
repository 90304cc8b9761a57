//! Episode JSON: a header (seed, config, script tag, frame count) followed by
//! a `frames` array. Each frame is
//! `[t, hx, hy, hz, ox, oy, oz, qx, qy, qz, qw, vx, vy, vz, wx, wy, wz, contact_code]`
//! with reals rounded to 9 significant digits.

use super::{Contact, Episode, Frame, SceneConfig, ScriptTag};
use crate::math::{Quat, Vec3};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize, Serializer};
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EpisodeFileError {
    #[error("episode json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("episode io: {0}")]
    Io(#[from] std::io::Error),
    #[error("frame {index}: {reason}")]
    BadFrame { index: usize, reason: String },
    #[error("header frame_count {header} but {actual} frames present")]
    CountMismatch { header: usize, actual: usize },
}

/// Round to nine significant decimal digits.
pub(crate) fn sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

struct FrameRow<'a>(&'a Frame);

impl Serialize for FrameRow<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let f = self.0;
        let mut seq = s.serialize_seq(Some(18))?;
        seq.serialize_element(&f.t_index)?;
        let reals = f
            .hand_pos
            .to_array()
            .into_iter()
            .chain(f.obj_pos.to_array())
            .chain(f.obj_rot.to_array())
            .chain(f.obj_vel.to_array())
            .chain(f.obj_angvel.to_array());
        for v in reals {
            seq.serialize_element(&sig9(v))?;
        }
        seq.serialize_element(&f.contact.code())?;
        seq.end()
    }
}

#[derive(Serialize)]
struct EpisodeOut<'a> {
    seed: u64,
    config: &'a SceneConfig,
    script_tag: ScriptTag,
    frame_count: usize,
    frames: Vec<FrameRow<'a>>,
}

#[derive(Deserialize)]
struct EpisodeIn {
    seed: u64,
    config: SceneConfig,
    script_tag: ScriptTag,
    frame_count: usize,
    frames: Vec<Vec<f64>>,
}

pub fn write_episode<W: Write>(episode: &Episode, writer: W) -> Result<(), EpisodeFileError> {
    let out = EpisodeOut {
        seed: episode.seed,
        config: &episode.config,
        script_tag: episode.script_tag,
        frame_count: episode.frames.len(),
        frames: episode.frames.iter().map(FrameRow).collect(),
    };
    serde_json::to_writer(writer, &out)?;
    Ok(())
}

pub fn read_episode<R: Read>(reader: R) -> Result<Episode, EpisodeFileError> {
    let raw: EpisodeIn = serde_json::from_reader(reader)?;
    if raw.frame_count != raw.frames.len() {
        return Err(EpisodeFileError::CountMismatch { header: raw.frame_count, actual: raw.frames.len() });
    }
    let frames = raw
        .frames
        .iter()
        .enumerate()
        .map(|(index, row)| parse_row(row).map_err(|reason| EpisodeFileError::BadFrame { index, reason }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Episode { seed: raw.seed, config: raw.config, script_tag: raw.script_tag, frames })
}

fn parse_row(row: &[f64]) -> Result<Frame, String> {
    if row.len() != 18 {
        return Err(format!("expected 18 values, found {}", row.len()));
    }
    let v3 = |i: usize| Vec3::new(row[i], row[i + 1], row[i + 2]);
    let code = row[17];
    let contact = (code.fract() == 0.0 && (0.0..=255.0).contains(&code))
        .then(|| Contact::from_code(code as u8))
        .flatten()
        .ok_or_else(|| format!("bad contact code {code}"))?;
    if row[0] < 0.0 || row[0].fract() != 0.0 {
        return Err(format!("bad frame index {}", row[0]));
    }
    Ok(Frame {
        t_index: row[0] as u32,
        hand_pos: v3(1),
        obj_pos: v3(4),
        obj_rot: Quat::new(row[7], row[8], row[9], row[10]),
        obj_vel: v3(11),
        obj_angvel: v3(14),
        contact,
    })
}

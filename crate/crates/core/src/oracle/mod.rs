//! Clip extraction, rule-based verb labels and balanced annotation sets.

mod annotations;
mod rules;

pub use annotations::{
    assign_splits, build_annotation_set, read_annotations, write_annotations, Annotation, AnnotationSet, Split,
};
pub use rules::{label_clip, OracleConfig};

use crate::sim::{Episode, Frame, SceneConfig};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Input window length: 1.5 s at 60 Hz.
pub const CLIP_FRAMES: usize = 90;
/// Prediction horizon following the window: 1 s.
pub const FUTURE_FRAMES: usize = 60;
pub const WINDOW_FRAMES: usize = CLIP_FRAMES + FUTURE_FRAMES;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("verb `{verb}`: {reason}")]
    Unbalanced { verb: Verb, reason: String },
    #[error("unknown verb `{0}`")]
    UnknownVerb(String),
    #[error("annotation line {line}: {reason}")]
    BadLine { line: usize, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Fall,
    Rise,
    Slide,
    Roll,
    Bounce,
    Spin,
    Stop,
    Start,
    Push,
    Pull,
    Drop,
    Toss,
}

impl Verb {
    pub const ALL: [Verb; 12] = [
        Verb::Fall,
        Verb::Rise,
        Verb::Slide,
        Verb::Roll,
        Verb::Bounce,
        Verb::Spin,
        Verb::Stop,
        Verb::Start,
        Verb::Push,
        Verb::Pull,
        Verb::Drop,
        Verb::Toss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Verb::Fall => "fall",
            Verb::Rise => "rise",
            Verb::Slide => "slide",
            Verb::Roll => "roll",
            Verb::Bounce => "bounce",
            Verb::Spin => "spin",
            Verb::Stop => "stop",
            Verb::Start => "start",
            Verb::Push => "push",
            Verb::Pull => "pull",
            Verb::Drop => "drop",
            Verb::Toss => "toss",
        }
    }

    pub fn code(self) -> u32 {
        Verb::ALL.iter().position(|&v| v == self).expect("listed") as u32
    }

    pub fn from_code(code: u32) -> Option<Verb> {
        Verb::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Verb {
    type Err = OracleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Verb::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| OracleError::UnknownVerb(s.to_string()))
    }
}

/// Identifies a clip by its episode and first frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClipRef {
    pub episode_seed: u64,
    pub start_frame: u32,
}

/// A 90-frame window with its 60-frame future, borrowed from an episode.
#[derive(Clone, Copy, Debug)]
pub struct Clip<'a> {
    pub reference: ClipRef,
    pub frames: &'a [Frame],
    pub future: &'a [Frame],
    pub config: &'a SceneConfig,
}

impl<'a> Clip<'a> {
    /// The window starting at `start`, if it and its future fit in the episode.
    pub fn at(episode: &'a Episode, start: usize) -> Option<Clip<'a>> {
        let end = start.checked_add(WINDOW_FRAMES)?;
        if end > episode.frames.len() {
            return None;
        }
        Some(Clip {
            reference: ClipRef { episode_seed: episode.seed, start_frame: start as u32 },
            frames: &episode.frames[start..start + CLIP_FRAMES],
            future: &episode.frames[start + CLIP_FRAMES..end],
            config: &episode.config,
        })
    }

    /// The frame whose object position the probing task regresses.
    pub fn last_input(&self) -> &'a Frame {
        &self.frames[CLIP_FRAMES - 1]
    }
}

/// All windows `[s, s + 90)` with a full 60-frame future, `s = 0, stride, ...`.
pub fn extract_clips(episode: &Episode, stride: usize) -> Result<Vec<Clip<'_>>, OracleError> {
    if stride == 0 {
        return Err(OracleError::ZeroStride);
    }
    Ok((0..episode.frames.len())
        .step_by(stride)
        .map_while(|s| Clip::at(episode, s))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;
    use crate::sim::{Contact, ScriptTag};

    fn still_episode(len: usize) -> Episode {
        let frames = (0..len)
            .map(|t| Frame { t_index: t as u32, ..Frame::at_rest(Vec3::ZERO, Vec3::new(0.0, 0.0, 0.96), Contact::Counter) })
            .collect();
        Episode { seed: 3, config: SceneConfig::default(), script_tag: ScriptTag::Reach, frames }
    }

    #[test]
    fn clip_counts_at_boundaries() {
        assert_eq!(extract_clips(&still_episode(150), 30).unwrap().len(), 1);
        assert_eq!(extract_clips(&still_episode(149), 30).unwrap().len(), 0);
        let starts: Vec<u32> =
            extract_clips(&still_episode(240), 30).unwrap().iter().map(|c| c.reference.start_frame).collect();
        // brute force: every multiple of the stride whose window fits
        let expected: Vec<u32> = (0..240u32).filter(|s| s % 30 == 0 && s + 150 <= 240).collect();
        assert_eq!(starts, expected);
        assert_eq!(starts, vec![0, 30, 60, 90]);
    }

    #[test]
    fn clip_shapes() {
        let ep = still_episode(200);
        let clip = Clip::at(&ep, 10).unwrap();
        assert_eq!(clip.frames.len(), CLIP_FRAMES);
        assert_eq!(clip.future.len(), FUTURE_FRAMES);
        assert_eq!(clip.future[0].t_index, 100);
        assert!(Clip::at(&ep, 51).is_none());
    }

    #[test]
    fn zero_stride_is_rejected() {
        assert_eq!(extract_clips(&still_episode(200), 0).unwrap_err(), OracleError::ZeroStride);
    }

    #[test]
    fn verb_names_parse() {
        for v in Verb::ALL {
            assert_eq!(v.name().parse::<Verb>().unwrap(), v);
            assert_eq!(Verb::from_code(v.code()), Some(v));
        }
        assert!("chop".parse::<Verb>().is_err());
    }
}

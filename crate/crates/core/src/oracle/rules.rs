//! Kinematic verb detectors over the 90 input frames of a clip.

use super::{Clip, Verb};
use crate::math::Vec3;
use crate::sim::{Contact, Frame, SceneConfig, FPS};
use serde::{Deserialize, Serialize};

/// Every detector threshold, overridable from the experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Net downward displacement of an airborne run, m.
    pub fall_min_drop: f64,
    /// Upward excursion while held or after a throw, m.
    pub rise_min_lift: f64,
    /// Translation in contact for slide/roll, m.
    pub contact_min_travel: f64,
    /// Contact-point slip separating slide from roll, m/s.
    pub slip_speed: f64,
    /// Angular speed required for rolling, rad/s.
    pub roll_min_angvel: f64,
    /// Rebound speed that counts as a bounce, m/s.
    pub bounce_min_rebound: f64,
    /// Angular speed for spin, rad/s.
    pub spin_min_angvel: f64,
    /// Maximum translation during a spin, m.
    pub spin_max_travel: f64,
    /// Minimum frames of sustained spin.
    pub spin_min_frames: usize,
    /// Speed above which the object is moving, m/s.
    pub moving_speed: f64,
    /// Speed below which the object is still, m/s.
    pub still_speed: f64,
    /// Frames the object must stay still for stop/start.
    pub still_frames: usize,
    /// Cosine between hand and object velocity for push/pull.
    pub codirectional_cos: f64,
    /// Minimum hand and object speed for push/pull, m/s.
    pub contact_min_speed: f64,
    /// Minimum hand-contact frames for push/pull.
    pub contact_min_frames: usize,
    /// Frames after a release within which the fall must happen.
    pub drop_window: usize,
    /// Release speed for a toss, m/s.
    pub toss_min_speed: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            fall_min_drop: 0.1,
            rise_min_lift: 0.1,
            contact_min_travel: 0.1,
            slip_speed: 0.02,
            roll_min_angvel: 1.0,
            bounce_min_rebound: 0.05,
            spin_min_angvel: 2.0,
            spin_max_travel: 0.05,
            spin_min_frames: 6,
            moving_speed: 0.2,
            still_speed: 0.02,
            still_frames: 10,
            codirectional_cos: 0.7,
            contact_min_speed: 0.05,
            contact_min_frames: 5,
            drop_window: 30,
            toss_min_speed: 0.5,
        }
    }
}

/// Yes/no judgement of whether `verb` happens in the clip's input frames.
pub fn label_clip(clip: &Clip<'_>, verb: Verb, cfg: &OracleConfig) -> bool {
    let f = clip.frames;
    let scene = clip.config;
    match verb {
        Verb::Fall => falls(f, cfg.fall_min_drop),
        Verb::Rise => rises(f, cfg.rise_min_lift),
        Verb::Slide => contact_motion(f, scene, cfg).0,
        Verb::Roll => contact_motion(f, scene, cfg).1,
        Verb::Bounce => f.windows(2).any(|w| {
            w[0].contact != Contact::Hand
                && w[1].contact == Contact::None
                && w[0].obj_vel.z < 0.0
                && w[1].obj_vel.z > cfg.bounce_min_rebound
        }),
        Verb::Spin => spins(f, cfg),
        Verb::Stop => stops(f, cfg),
        Verb::Start => starts(f, cfg),
        Verb::Push => hand_drag_frames(f, scene, cfg).0 >= cfg.contact_min_frames,
        Verb::Pull => hand_drag_frames(f, scene, cfg).1 >= cfg.contact_min_frames,
        Verb::Drop => releases(f, scene).any(|t| {
            let end = (t + cfg.drop_window).min(f.len());
            let lowest = f[t..end]
                .iter()
                .take_while(|fr| fr.contact == Contact::None)
                .chain(f[t..end].iter().find(|fr| fr.contact != Contact::None))
                .map(|fr| fr.obj_pos.z)
                .fold(f64::INFINITY, f64::min);
            f[t - 1].obj_pos.z - lowest > cfg.fall_min_drop
        }),
        Verb::Toss => releases(f, scene).any(|t| {
            let v = f[t].obj_vel;
            v.z > cfg.toss_min_speed || v.xy().norm() > cfg.toss_min_speed
        }),
    }
}

/// Maximal runs `[a, b)` of frames satisfying `pred`.
fn runs(frames: &[Frame], pred: impl Fn(&Frame) -> bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, f) in frames.iter().enumerate() {
        match (pred(f), start) {
            (true, None) => start = Some(i),
            (false, Some(a)) => {
                out.push((a, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(a) = start {
        out.push((a, frames.len()));
    }
    out
}

/// Object bottom sits on the counter top or the floor.
fn on_surface(f: &Frame, scene: &SceneConfig) -> bool {
    let bottom = f.obj_pos.z - scene.object_radius;
    bottom.abs() <= 1e-3 || (scene.over_counter(f.obj_pos) && (bottom - scene.counter_height).abs() <= 1e-3)
}

fn supported(f: &Frame, scene: &SceneConfig) -> bool {
    match f.contact {
        Contact::Counter | Contact::Floor => true,
        Contact::Hand => on_surface(f, scene),
        Contact::None => false,
    }
}

fn falls(f: &[Frame], min_drop: f64) -> bool {
    runs(f, |fr| fr.contact == Contact::None).into_iter().any(|(a, b)| {
        let z_start = f[a.saturating_sub(1)].obj_pos.z;
        let z_end = f[b.min(f.len() - 1)].obj_pos.z;
        z_start - z_end > min_drop
    })
}

/// Largest rise `z_j - min_{i<=j} z_i` over a segment.
fn max_rise(z: impl Iterator<Item = f64>) -> f64 {
    let mut lowest = f64::INFINITY;
    let mut best = 0.0f64;
    for v in z {
        lowest = lowest.min(v);
        best = best.max(v - lowest);
    }
    best
}

fn rises(f: &[Frame], min_lift: f64) -> bool {
    let held = runs(f, |fr| fr.contact == Contact::Hand);
    let thrown = runs(f, |fr| fr.contact == Contact::None)
        .into_iter()
        .filter(|&(a, _)| a > 0 && f[a - 1].contact == Contact::Hand);
    held.into_iter().chain(thrown).any(|(a, b)| {
        let from = a.saturating_sub(1);
        max_rise(f[from..b].iter().map(|fr| fr.obj_pos.z)) > min_lift
    })
}

/// (slide, roll) decided per contact run: each run is attributed to whichever
/// mode covered more distance, so the two never share a run.
fn contact_motion(f: &[Frame], scene: &SceneConfig, cfg: &OracleConfig) -> (bool, bool) {
    let (mut slide, mut roll) = (false, false);
    for (a, b) in runs(f, |fr| supported(fr, scene)) {
        let (mut slid, mut rolled) = (0.0, 0.0);
        for t in a + 1..b {
            let travel = (f[t].obj_pos - f[t - 1].obj_pos).xy().norm();
            let slip = f[t].slip_velocity(scene.object_radius).xy().norm();
            if slip > cfg.slip_speed {
                slid += travel;
            } else if f[t].obj_angvel.norm() > cfg.roll_min_angvel {
                rolled += travel;
            }
        }
        if slid >= rolled {
            slide |= slid > cfg.contact_min_travel;
        } else {
            roll |= rolled > cfg.contact_min_travel;
        }
    }
    (slide, roll)
}

fn spins(f: &[Frame], cfg: &OracleConfig) -> bool {
    runs(f, |fr| fr.obj_angvel.norm() > cfg.spin_min_angvel).into_iter().any(|(a, b)| {
        b - a >= cfg.spin_min_frames
            && f[a..b].iter().all(|fr| fr.obj_pos.distance(f[a].obj_pos) < cfg.spin_max_travel)
    })
}

fn still_runs(f: &[Frame], cfg: &OracleConfig) -> Vec<(usize, usize)> {
    runs(f, |fr| fr.obj_vel.norm() < cfg.still_speed)
        .into_iter()
        .filter(|(a, b)| b - a >= cfg.still_frames)
        .collect()
}

fn stops(f: &[Frame], cfg: &OracleConfig) -> bool {
    still_runs(f, cfg)
        .into_iter()
        .any(|(a, _)| f[..a].iter().any(|fr| fr.obj_vel.norm() > cfg.moving_speed))
}

fn starts(f: &[Frame], cfg: &OracleConfig) -> bool {
    still_runs(f, cfg)
        .into_iter()
        .any(|(_, b)| f[b..].iter().any(|fr| fr.obj_vel.norm() > cfg.moving_speed))
}

/// Counts of (push, pull) frames: hand in contact with a supported object,
/// both moving in the same direction, the hand behind (push) or ahead (pull).
fn hand_drag_frames(f: &[Frame], scene: &SceneConfig, cfg: &OracleConfig) -> (usize, usize) {
    let (mut push, mut pull) = (0, 0);
    for t in 1..f.len() {
        let fr = &f[t];
        if fr.contact != Contact::Hand || !on_surface(fr, scene) {
            continue;
        }
        let hand_vel: Vec3 = (fr.hand_pos - f[t - 1].hand_pos) * FPS;
        let (hs, os) = (hand_vel.norm(), fr.obj_vel.norm());
        if hs < cfg.contact_min_speed || os < cfg.contact_min_speed {
            continue;
        }
        if hand_vel.dot(fr.obj_vel) / (hs * os) <= cfg.codirectional_cos {
            continue;
        }
        let lead = (fr.obj_pos - fr.hand_pos).dot(hand_vel);
        if lead > 0.0 {
            push += 1;
        } else if lead < 0.0 {
            pull += 1;
        }
    }
    (push, pull)
}

/// Frames at which a held (off-surface) object is let go into the air.
fn releases<'a>(f: &'a [Frame], scene: &'a SceneConfig) -> impl Iterator<Item = usize> + 'a {
    (1..f.len()).filter(move |&t| {
        f[t - 1].contact == Contact::Hand && !on_surface(&f[t - 1], scene) && f[t].contact == Contact::None
    })
}

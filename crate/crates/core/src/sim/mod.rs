//! Procedural hand/object episodes on a counter-and-floor scene.
//!
//! The scene is a floor plane at `z = 0` and an axis-aligned counter box
//! centred on the origin whose top sits at `counter_height`. A kinematic hand
//! (a point) follows scripted waypoints and can push or grasp a single rigid
//! object of unit mass.

mod episode_file;
mod physics;
mod randomize;
mod script;

pub use episode_file::{read_episode, write_episode, EpisodeFileError};
pub use physics::{step, step_with, HandCommand};
pub use randomize::SceneRandomization;
pub use script::generate_episode;

use crate::math::{Quat, Vec3};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Simulation rate.
pub const FPS: f64 = 60.0;
pub const DT: f64 = 1.0 / FPS;
/// Episodes are capped at ten seconds.
pub const MAX_EPISODE_FRAMES: usize = 600;
/// One 90-frame input window plus a 60-frame prediction target.
pub const MIN_EPISODE_FRAMES: usize = 150;
/// Effective contact radius of the point hand when pushing.
pub const HAND_RADIUS: f64 = 0.02;
/// The object attaches only when the hand is this many radii from its centre.
pub const GRASP_REACH: f64 = 1.5;
/// Spheres couple friction into spin (and so can roll) at or above this friction.
pub const ROLLING_FRICTION_MIN: f64 = 0.15;
/// Rolling-resistance coefficient; deceleration is this times gravity.
pub const ROLLING_RESISTANCE: f64 = 0.02;
/// Torsional friction about the contact normal, as a fraction of `mu * g / r`.
pub const TORSION_COEFF: f64 = 0.02;
/// Rebounds slower than this come to rest on the surface.
pub const BOUNCE_CUTOFF: f64 = 0.05;
/// Height tolerance for deciding that the object rests on a surface.
pub const SUPPORT_TOL: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("integration diverged at frame {t_index}")]
    IntegrationDiverged { t_index: u32 },
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("episode {seed} stayed shorter than {MIN_EPISODE_FRAMES} frames after {attempts} attempts")]
    EpisodeTooShort { seed: u64, attempts: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectShape {
    Sphere,
    Cube,
}

impl ObjectShape {
    /// Moment of inertia of a unit-mass body about an axis through its centre.
    pub fn inertia(self, radius: f64) -> f64 {
        match self {
            ObjectShape::Sphere => 0.4 * radius * radius,
            // cube of side 2r
            ObjectShape::Cube => (2.0 / 3.0) * radius * radius,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Magnitude of downward gravity, m/s^2.
    pub gravity: f64,
    pub counter_height: f64,
    /// Half-widths of the counter top along x and y.
    pub counter_extent: [f64; 2],
    pub object_shape: ObjectShape,
    pub object_radius: f64,
    pub friction_mu: f64,
    pub restitution: f64,
    pub hand_speed: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            counter_height: 0.9,
            counter_extent: [0.6, 0.4],
            object_shape: ObjectShape::Sphere,
            object_radius: 0.12,
            friction_mu: 0.3,
            restitution: 0.4,
            hand_speed: 0.6,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        let finite = [
            self.gravity,
            self.counter_height,
            self.counter_extent[0],
            self.counter_extent[1],
            self.object_radius,
            self.friction_mu,
            self.restitution,
            self.hand_speed,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite");
        }
        if self.gravity < 0.0 {
            return bad("gravity must be non-negative");
        }
        if self.counter_height <= 0.0 {
            return bad("counter_height must be positive");
        }
        if self.counter_extent.iter().any(|&e| e <= self.object_radius) {
            return bad("counter_extent must exceed object_radius");
        }
        if self.object_radius <= 0.0 {
            return bad("object_radius must be positive");
        }
        if !(0.0..=2.0).contains(&self.friction_mu) {
            return bad("friction_mu must lie in [0, 2]");
        }
        if !(0.0..=1.0).contains(&self.restitution) {
            return bad("restitution must lie in [0, 1]");
        }
        if self.hand_speed <= 0.0 {
            return bad("hand_speed must be positive");
        }
        Ok(())
    }

    /// True when the horizontal position lies over the counter top.
    pub fn over_counter(&self, p: Vec3) -> bool {
        p.x.abs() <= self.counter_extent[0] && p.y.abs() <= self.counter_extent[1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contact {
    None,
    Counter,
    Floor,
    Hand,
}

impl Contact {
    pub fn code(self) -> u8 {
        match self {
            Contact::None => 0,
            Contact::Counter => 1,
            Contact::Floor => 2,
            Contact::Hand => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Contact> {
        Some(match code {
            0 => Contact::None,
            1 => Contact::Counter,
            2 => Contact::Floor,
            3 => Contact::Hand,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t_index: u32,
    pub hand_pos: Vec3,
    pub obj_pos: Vec3,
    pub obj_rot: Quat,
    pub obj_vel: Vec3,
    pub obj_angvel: Vec3,
    pub contact: Contact,
}

impl Frame {
    /// A frame with the object at rest at `obj_pos`.
    pub fn at_rest(hand_pos: Vec3, obj_pos: Vec3, contact: Contact) -> Frame {
        Frame {
            t_index: 0,
            hand_pos,
            obj_pos,
            obj_rot: Quat::IDENTITY,
            obj_vel: Vec3::ZERO,
            obj_angvel: Vec3::ZERO,
            contact,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.hand_pos.is_finite()
            && self.obj_pos.is_finite()
            && self.obj_rot.is_finite()
            && self.obj_vel.is_finite()
            && self.obj_angvel.is_finite()
    }

    /// Translational plus rotational kinetic energy and potential energy of a
    /// unit-mass object.
    pub fn energy(&self, config: &SceneConfig) -> f64 {
        let inertia = config.object_shape.inertia(config.object_radius);
        0.5 * self.obj_vel.norm_sq()
            + 0.5 * inertia * self.obj_angvel.norm_sq()
            + config.gravity * self.obj_pos.z
    }

    /// Slip velocity of the contact point below the centre: `v + w x (-r z)`.
    pub fn slip_velocity(&self, radius: f64) -> Vec3 {
        self.obj_vel + self.obj_angvel.cross(Vec3::new(0.0, 0.0, -radius))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScriptTag {
    Reach,
    LiftCarryPlace,
    Push,
    DropFromEdge,
    Toss,
    SpinInPlace,
    PullBack,
}

impl ScriptTag {
    pub const ALL: [ScriptTag; 7] = [
        ScriptTag::Reach,
        ScriptTag::LiftCarryPlace,
        ScriptTag::Push,
        ScriptTag::DropFromEdge,
        ScriptTag::Toss,
        ScriptTag::SpinInPlace,
        ScriptTag::PullBack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScriptTag::Reach => "reach",
            ScriptTag::LiftCarryPlace => "lift-carry-place",
            ScriptTag::Push => "push",
            ScriptTag::DropFromEdge => "drop-from-edge",
            ScriptTag::Toss => "toss",
            ScriptTag::SpinInPlace => "spin-in-place",
            ScriptTag::PullBack => "pull-back",
        }
    }
}

impl fmt::Display for ScriptTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub seed: u64,
    pub config: SceneConfig,
    pub script_tag: ScriptTag,
    pub frames: Vec<Frame>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

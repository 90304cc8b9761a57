//! Hand programs. Each script is a list of waypoint phases sampled from the
//! episode RNG; the runner feeds the resulting hand commands to the
//! integrator until the object settles.

use super::{
    step_with, Contact, Episode, Frame, HandCommand, SceneConfig, ScriptTag, SimError, HAND_RADIUS,
    MAX_EPISODE_FRAMES, MIN_EPISODE_FRAMES,
};
use crate::math::{Quat, Vec3};
use crate::rng::rng_from;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use std::f64::consts::{PI, TAU};

const MAX_ATTEMPTS: usize = 10;
/// Consecutive resting frames that end an episode once the script is done.
const REST_FRAMES: usize = 30;
/// Hand offset above the object centre when grasping from the top.
const TOP_GRASP: f64 = 0.6;

#[derive(Clone, Copy, Debug)]
enum Waypoint {
    Fixed(Vec3),
    /// Object position at phase start plus an offset.
    FromObject(Vec3),
    /// Wherever the hand is when the phase starts.
    Stay,
}

#[derive(Clone, Copy, Debug)]
struct Phase {
    waypoint: Waypoint,
    grasp: bool,
    twist: f64,
    speed: f64,
    /// Frames to hold after arriving.
    hold: u32,
    /// Hard cap on phase length (used to release while still moving).
    max_frames: Option<u32>,
}

impl Phase {
    fn to(waypoint: Waypoint, speed: f64) -> Self {
        Phase { waypoint, grasp: false, twist: 0.0, speed, hold: 0, max_frames: None }
    }

    fn grasping(mut self) -> Self {
        self.grasp = true;
        self
    }

    fn hold(mut self, frames: u32) -> Self {
        self.hold = frames;
        self
    }
}

struct Plan {
    initial: Frame,
    phases: Vec<Phase>,
}

/// Generate one episode. Pure in `(seed, config)`.
pub fn generate_episode(seed: u64, config: &SceneConfig) -> Result<Episode, SimError> {
    config.validate()?;
    let mut rng = rng_from(seed);
    let tag = ScriptTag::ALL[rng.gen_range(0..ScriptTag::ALL.len())];
    for _ in 0..MAX_ATTEMPTS {
        let plan = plan_script(tag, &mut rng, config);
        let frames = run_plan(&plan, config)?;
        if frames.len() >= MIN_EPISODE_FRAMES {
            return Ok(Episode { seed, config: config.clone(), script_tag: tag, frames });
        }
    }
    Err(SimError::EpisodeTooShort { seed, attempts: MAX_ATTEMPTS })
}

fn run_plan(plan: &Plan, config: &SceneConfig) -> Result<Vec<Frame>, SimError> {
    let mut frames = Vec::with_capacity(MAX_EPISODE_FRAMES);
    let mut cur = plan.initial;
    frames.push(cur);

    let mut idx = 0;
    let mut target = None;
    let mut in_phase = 0u32;
    let mut held = 0u32;
    let mut resting = 0usize;

    while frames.len() < MAX_EPISODE_FRAMES {
        let cmd = match plan.phases.get(idx) {
            Some(phase) => {
                let t = *target.get_or_insert_with(|| match phase.waypoint {
                    Waypoint::Fixed(p) => p,
                    Waypoint::FromObject(off) => cur.obj_pos + off,
                    Waypoint::Stay => cur.hand_pos,
                });
                HandCommand { target: t, grasp: phase.grasp, twist: phase.twist, speed: phase.speed }
            }
            None => HandCommand { target: cur.hand_pos, grasp: false, twist: 0.0, speed: config.hand_speed },
        };
        cur = step_with(&cur, config, &cmd)?;
        frames.push(cur);

        if let Some(phase) = plan.phases.get(idx) {
            in_phase += 1;
            if cur.hand_pos == cmd.target {
                held += 1;
            }
            let arrived = held > phase.hold;
            let timed_out = phase.max_frames.is_some_and(|m| in_phase >= m);
            if arrived || timed_out {
                idx += 1;
                target = None;
                in_phase = 0;
                held = 0;
            }
        } else {
            let at_rest = matches!(cur.contact, Contact::Counter | Contact::Floor)
                && cur.obj_vel.norm() < 0.01
                && cur.obj_angvel.norm() < 0.05;
            resting = if at_rest { resting + 1 } else { 0 };
            if resting >= REST_FRAMES {
                break;
            }
        }
    }
    Ok(frames)
}

fn uniform(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn horizontal(angle: f64) -> Vec3 {
    Vec3::new(angle.cos(), angle.sin(), 0.0)
}

/// A resting position on the counter top, `margin` inside the edges.
fn counter_point(rng: &mut ChaCha20Rng, config: &SceneConfig, margin: f64) -> Vec3 {
    let [ex, ey] = config.counter_extent;
    let r = config.object_radius;
    Vec3::new(
        uniform(rng, -ex + margin, ex - margin),
        uniform(rng, -ey + margin, ey - margin),
        config.counter_height + r,
    )
}

fn plan_script(tag: ScriptTag, rng: &mut ChaCha20Rng, config: &SceneConfig) -> Plan {
    let r = config.object_radius;
    let hs = config.hand_speed;
    let top = config.counter_height;
    let [ex, ey] = config.counter_extent;
    let margin = r + 0.05;

    let hand_start = Vec3::new(uniform(rng, -0.3, 0.3), uniform(rng, -0.8, -0.6), uniform(rng, 1.1, 1.25));
    let mut obj = counter_point(rng, config, margin);
    let yaw = uniform(rng, 0.0, TAU);
    let idle = rng.gen_range(0..20u32);

    let grasp_top = Vec3::new(0.0, 0.0, TOP_GRASP * r);
    let above = |p: Vec3, h: f64| p + Vec3::new(0.0, 0.0, h);
    let mut phases = vec![Phase::to(Waypoint::Fixed(hand_start), hs).hold(idle)];

    // Approach from directly above a grasp point, then descend vertically so
    // the hand never shoves the object on the way in.
    let approach_from_above = |phases: &mut Vec<Phase>, point: Vec3| {
        phases.push(Phase::to(Waypoint::Fixed(above(point, 0.2)), hs));
        phases.push(Phase::to(Waypoint::Fixed(point), 0.5 * hs).hold(4));
    };

    match tag {
        ScriptTag::Reach => {
            let dir = horizontal(PI / 2.0 + uniform(rng, -1.0, 1.0));
            let gap = uniform(rng, 0.02, 0.15);
            let stand_off = obj - dir * (r + HAND_RADIUS + gap);
            phases.push(Phase::to(Waypoint::Fixed(above(stand_off - dir * 0.1, 0.15)), hs));
            phases.push(Phase::to(Waypoint::Fixed(stand_off), 0.5 * hs).hold(rng.gen_range(10..40)));
            phases.push(Phase::to(Waypoint::Fixed(hand_start), hs));
        }
        ScriptTag::LiftCarryPlace => {
            let lift = uniform(rng, 0.1, 0.35);
            let dest = counter_point(rng, config, margin);
            let place_height = if rng.gen_bool(0.3) { uniform(rng, 0.12, 0.3) } else { 0.0 };
            approach_from_above(&mut phases, obj + grasp_top);
            phases.push(Phase::to(Waypoint::Stay, hs).grasping().hold(5));
            phases.push(Phase::to(Waypoint::FromObject(grasp_top + Vec3::new(0.0, 0.0, lift)), hs).grasping());
            phases.push(Phase::to(Waypoint::Fixed(above(dest + grasp_top, lift)), hs).grasping());
            phases.push(Phase::to(Waypoint::Fixed(above(dest + grasp_top, place_height)), 0.6 * hs).grasping());
            phases.push(Phase::to(Waypoint::Stay, hs).hold(10));
            phases.push(Phase::to(Waypoint::Fixed(above(dest + grasp_top, 0.25)), hs));
            phases.push(Phase::to(Waypoint::Fixed(hand_start), hs));
        }
        ScriptTag::Push => {
            let dir = horizontal(uniform(rng, 0.0, TAU));
            let push_len = uniform(rng, 0.1, 0.6);
            let push_speed = uniform(rng, 0.3, 1.3);
            let behind = obj - dir * (r + HAND_RADIUS + 0.03);
            approach_from_above(&mut phases, behind);
            phases.push(Phase::to(Waypoint::Fixed(behind + dir * push_len), push_speed));
            phases.push(Phase::to(Waypoint::Stay, hs).hold(rng.gen_range(0..15)));
            phases.push(Phase::to(Waypoint::Fixed(above(behind + dir * push_len, 0.25)), hs));
            phases.push(Phase::to(Waypoint::Fixed(hand_start), hs));
        }
        ScriptTag::DropFromEdge => {
            let edge = rng.gen_range(0..4usize);
            let (outward, along_extent, edge_extent) = match edge {
                0 => (Vec3::new(1.0, 0.0, 0.0), ey, ex),
                1 => (Vec3::new(-1.0, 0.0, 0.0), ey, ex),
                2 => (Vec3::new(0.0, 1.0, 0.0), ex, ey),
                _ => (Vec3::new(0.0, -1.0, 0.0), ex, ey),
            };
            let along = Vec3::new(-outward.y, outward.x, 0.0);
            let s = uniform(rng, -along_extent + margin, along_extent - margin);
            if rng.gen_bool(0.6) {
                // Carry past the edge and let go.
                let overhang = r + uniform(rng, 0.03, 0.15);
                let height = uniform(rng, 0.05, 0.35);
                let release = outward * (edge_extent + overhang) + along * s + Vec3::new(0.0, 0.0, top + r + height);
                let lift = height + 0.05;
                approach_from_above(&mut phases, obj + grasp_top);
                phases.push(Phase::to(Waypoint::Stay, hs).grasping().hold(5));
                phases.push(Phase::to(Waypoint::FromObject(grasp_top + Vec3::new(0.0, 0.0, lift)), hs).grasping());
                phases.push(Phase::to(Waypoint::Fixed(release + grasp_top), hs).grasping().hold(5));
                phases.push(Phase::to(Waypoint::Stay, hs).hold(20));
                phases.push(Phase::to(Waypoint::Fixed(hand_start), hs));
            } else {
                // Start near the edge and shove it over.
                let inset = uniform(rng, r + 0.02, r + 0.12);
                obj = outward * (edge_extent - inset) + along * s + Vec3::new(0.0, 0.0, top + r);
                let wobble = uniform(rng, -0.3, 0.3);
                let dir = (outward + along * wobble).normalized().unwrap_or(outward);
                let behind = obj - dir * (r + HAND_RADIUS + 0.03);
                let push_len = 0.03 + inset / dir.dot(outward) + r + uniform(rng, 0.05, 0.15);
                approach_from_above(&mut phases, behind);
                phases.push(Phase::to(Waypoint::Fixed(behind + dir * push_len), uniform(rng, 0.3, 1.0)));
                phases.push(Phase::to(Waypoint::Stay, hs).hold(10));
                phases.push(Phase::to(Waypoint::Fixed(hand_start), hs));
            }
        }
        ScriptTag::Toss => {
            let lift = uniform(rng, 0.1, 0.25);
            let dir = horizontal(uniform(rng, 0.0, TAU));
            let elevation = uniform(rng, 0.0, PI / 3.0);
            let throw_dir = dir * elevation.cos() + Vec3::new(0.0, 0.0, elevation.sin());
            let toss_speed = uniform(rng, 1.0, 2.5);
            let throw_len = uniform(rng, 0.15, 0.3);
            let frames = (throw_len / (toss_speed * super::DT)).ceil() as u32;
            approach_from_above(&mut phases, obj + grasp_top);
            phases.push(Phase::to(Waypoint::Stay, hs).grasping().hold(5));
            let held = obj + grasp_top + Vec3::new(0.0, 0.0, lift);
            phases.push(Phase::to(Waypoint::Fixed(held), hs).grasping());
            phases.push(Phase::to(Waypoint::Fixed(held - dir * 0.1), hs).grasping().hold(3));
            phases.push(Phase {
                waypoint: Waypoint::Fixed(held + throw_dir * 2.0),
                grasp: true,
                twist: 0.0,
                speed: toss_speed,
                hold: 0,
                max_frames: Some(frames),
            });
            phases.push(Phase::to(Waypoint::Stay, hs).hold(5));
            phases.push(Phase::to(Waypoint::Fixed(hand_start), hs));
        }
        ScriptTag::SpinInPlace => {
            let rate = uniform(rng, 3.0, 9.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let twist_frames = rng.gen_range(20..50);
            approach_from_above(&mut phases, obj + grasp_top);
            phases.push(Phase::to(Waypoint::Stay, hs).grasping().hold(4));
            let mut twist = Phase::to(Waypoint::Stay, hs).grasping().hold(twist_frames);
            twist.twist = rate;
            phases.push(twist);
            phases.push(Phase::to(Waypoint::Stay, hs).hold(5));
            phases.push(Phase::to(Waypoint::Fixed(above(obj, 0.3)), hs));
            phases.push(Phase::to(Waypoint::Fixed(hand_start), hs));
        }
        ScriptTag::PullBack => {
            obj.y = uniform(rng, -ey + r + 0.2, ey - margin);
            let dir = horizontal(-PI / 2.0 + uniform(rng, -0.5, 0.5));
            // room left before the object would leave the counter
            let room_y = (obj.y + ey - r - 0.02) / -dir.y;
            let room_x = if dir.x > 0.0 { (ex - r - 0.02 - obj.x) / dir.x } else { (obj.x + ex - r - 0.02) / -dir.x };
            let room = room_y.min(room_x);
            let pull_len = uniform(rng, 0.12, room.max(0.13));
            let grip = obj + dir * (0.8 * r);
            approach_from_above(&mut phases, grip);
            phases.push(Phase::to(Waypoint::Stay, hs).grasping().hold(5));
            phases.push(Phase::to(Waypoint::Fixed(grip + dir * pull_len), uniform(rng, 0.3, 0.8)).grasping());
            phases.push(Phase::to(Waypoint::Stay, hs).hold(8));
            phases.push(Phase::to(Waypoint::Fixed(above(grip + dir * pull_len, 0.25)), hs));
            phases.push(Phase::to(Waypoint::Fixed(hand_start), hs));
        }
    }

    let mut initial = Frame::at_rest(hand_start, obj, Contact::Counter);
    initial.obj_rot = Quat::from_axis_angle(Vec3::Z, yaw);
    Plan { initial, phases }
}

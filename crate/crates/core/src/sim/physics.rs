//! One fixed 1/60 s integration step.
//!
//! Ballistic flight uses the exact constant-acceleration update so free fall
//! matches closed-form kinematics; impacts inside a step are resolved as
//! events at the analytic touchdown time. Contact friction updates velocity
//! first and then position (semi-implicit Euler).

use super::{
    Contact, Frame, ObjectShape, SceneConfig, SimError, BOUNCE_CUTOFF, DT, GRASP_REACH,
    HAND_RADIUS, ROLLING_FRICTION_MIN, ROLLING_RESISTANCE, SUPPORT_TOL, TORSION_COEFF,
};
use crate::math::{Quat, Vec3};

/// What the scripted hand does during one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HandCommand {
    pub target: Vec3,
    pub grasp: bool,
    /// Spin rate (rad/s about +z) imposed on a grasped object.
    pub twist: f64,
    /// Maximum hand speed for this step, m/s.
    pub speed: f64,
}

/// Advance one frame with the hand moving toward `hand_target` at the scene's
/// hand speed.
pub fn step(
    state: &Frame,
    config: &SceneConfig,
    hand_target: Vec3,
    grasp: bool,
) -> Result<Frame, SimError> {
    step_with(
        state,
        config,
        &HandCommand { target: hand_target, grasp, twist: 0.0, speed: config.hand_speed },
    )
}

pub fn step_with(state: &Frame, config: &SceneConfig, cmd: &HandCommand) -> Result<Frame, SimError> {
    let r = config.object_radius;
    let to_target = cmd.target - state.hand_pos;
    let max_move = cmd.speed * DT;
    let dist = to_target.norm();
    let hand = if dist <= max_move {
        cmd.target
    } else {
        state.hand_pos + to_target * (max_move / dist)
    };
    let hand_vel = (hand - state.hand_pos) / DT;

    let mut next = Frame { t_index: state.t_index + 1, hand_pos: hand, ..*state };
    let attached = cmd.grasp && state.obj_pos.distance(state.hand_pos) <= GRASP_REACH * r;
    if attached {
        let mut p = hand + (state.obj_pos - state.hand_pos);
        let floor = surface_below(config, p);
        p.z = p.z.max(floor + r);
        next.obj_pos = p;
        next.obj_vel = (p - state.obj_pos) / DT;
        next.obj_angvel = Vec3::new(0.0, 0.0, cmd.twist);
        next.obj_rot = integrate_rotation(state.obj_rot, next.obj_angvel);
        next.contact = Contact::Hand;
    } else {
        match support(state, config) {
            Some((surface, level)) => supported_motion(state, config, surface, level, &mut next),
            None => ballistic_motion(state, config, &mut next),
        }
        counter_side_collision(config, &mut next);
        if !cmd.grasp {
            hand_push(config, hand, hand_vel, &mut next);
        }
    }

    if !next.is_finite() {
        return Err(SimError::IntegrationDiverged { t_index: next.t_index });
    }
    Ok(next)
}

/// Height of the surface directly beneath `p` that the object could land on.
fn surface_below(config: &SceneConfig, p: Vec3) -> f64 {
    let top = config.counter_height;
    if config.over_counter(p) && p.z - config.object_radius >= top - SUPPORT_TOL {
        top
    } else {
        0.0
    }
}

/// The surface the object currently rests on, if any.
fn support(state: &Frame, config: &SceneConfig) -> Option<(Contact, f64)> {
    if state.obj_vel.z > 1e-9 {
        return None;
    }
    let bottom = state.obj_pos.z - config.object_radius;
    let top = config.counter_height;
    if config.over_counter(state.obj_pos) && (bottom - top).abs() <= SUPPORT_TOL {
        Some((Contact::Counter, top))
    } else if bottom.abs() <= SUPPORT_TOL {
        Some((Contact::Floor, 0.0))
    } else {
        None
    }
}

fn integrate_rotation(q: Quat, omega: Vec3) -> Quat {
    if omega == Vec3::ZERO {
        return q;
    }
    (Quat::from_rotation_vector(omega, DT) * q).normalized()
}

fn supported_motion(state: &Frame, config: &SceneConfig, surface: Contact, level: f64, next: &mut Frame) {
    let r = config.object_radius;
    let g = config.gravity;
    let mu = config.friction_mu;
    let mut v = state.obj_vel.xy();
    let mut w = state.obj_angvel;

    let coupled = config.object_shape == ObjectShape::Sphere && mu >= ROLLING_FRICTION_MIN;
    if coupled {
        let slip = (v + w.cross(Vec3::new(0.0, 0.0, -r))).xy();
        let s = slip.norm();
        if s > 1e-12 {
            // Kinetic friction opposes slip; the torque it exerts spins the
            // sphere up. Slip shrinks by (1 + m r^2 / I) mu g dt = 3.5 mu g dt
            // per step, and the impulse is scaled down when that would
            // overshoot into rolling.
            let capacity = 3.5 * mu * g * DT;
            let frac = if capacity > 0.0 { (s / capacity).min(1.0) } else { 0.0 };
            let dir = slip / s;
            v += dir * (-mu * g * DT * frac);
            w += Vec3::Z.cross(dir) * (2.5 * mu * g * DT / r * frac);
        } else {
            let speed = v.norm();
            let decel = ROLLING_RESISTANCE * g * DT;
            v = if speed <= decel { Vec3::ZERO } else { v * (1.0 - decel / speed) };
            let roll = Vec3::Z.cross(v) / r;
            w = Vec3::new(roll.x, roll.y, w.z);
        }
    } else {
        let speed = v.norm();
        let decel = mu * g * DT;
        v = if speed <= decel { Vec3::ZERO } else { v * (1.0 - decel / speed) };
        if config.object_shape == ObjectShape::Cube {
            w = Vec3::new(0.0, 0.0, w.z);
        }
    }

    let torsion = TORSION_COEFF * mu * g / r * DT;
    w.z = if w.z.abs() <= torsion { 0.0 } else { w.z - torsion * w.z.signum() };

    let mut p = state.obj_pos + v * DT;
    p.z = level + r;
    next.obj_pos = p;
    next.obj_vel = v;
    next.obj_angvel = w;
    next.obj_rot = integrate_rotation(state.obj_rot, w);
    next.contact = match surface {
        Contact::Counter if !config.over_counter(p) => Contact::None,
        other => other,
    };
}

fn ballistic_motion(state: &Frame, config: &SceneConfig, next: &mut Frame) {
    let r = config.object_radius;
    let g = config.gravity;
    let e = config.restitution;
    let mut p = state.obj_pos;
    let mut v = state.obj_vel;
    let mut remaining = DT;
    let mut contact = Contact::None;

    for _ in 0..8 {
        let mut level = surface_below(config, p);
        let z_end = p.z + v.z * remaining - 0.5 * g * remaining * remaining;
        if z_end - r >= level {
            p += v.xy() * remaining;
            p.z = z_end;
            v.z -= g * remaining;
            remaining = 0.0;
            break;
        }
        let mut tau = impact_time(p.z - r - level, v.z, g, remaining);
        if level > 0.0 && !config.over_counter(p + v.xy() * tau) {
            // Slides past the counter edge before touching down.
            level = 0.0;
            let z_floor = p.z + v.z * remaining - 0.5 * g * remaining * remaining;
            if z_floor - r >= 0.0 {
                p += v.xy() * remaining;
                p.z = z_floor;
                v.z -= g * remaining;
                remaining = 0.0;
                break;
            }
            tau = impact_time(p.z - r, v.z, g, remaining);
        }
        let vz_impact = v.z - g * tau;
        p += v.xy() * tau;
        p.z = level + r;
        remaining -= tau;
        let rebound = -e * vz_impact;
        if rebound < BOUNCE_CUTOFF {
            v.z = 0.0;
            p += v.xy() * remaining;
            remaining = 0.0;
            contact = if level > 0.0 { Contact::Counter } else { Contact::Floor };
            break;
        }
        v.z = rebound;
    }
    if remaining > 0.0 {
        // Ran out of bounce events inside one step; settle on the surface.
        let level = surface_below(config, p);
        p += v.xy() * remaining;
        p.z = level + r;
        v.z = 0.0;
        contact = if level > 0.0 { Contact::Counter } else { Contact::Floor };
    }

    next.obj_pos = p;
    next.obj_vel = v;
    next.obj_angvel = state.obj_angvel;
    next.obj_rot = integrate_rotation(state.obj_rot, state.obj_angvel);
    next.contact = contact;
}

/// Earliest time in `[0, horizon]` at which height `h` above the surface
/// reaches zero under vertical velocity `vz` and gravity `g`.
fn impact_time(h: f64, vz: f64, g: f64, horizon: f64) -> f64 {
    let h = h.max(0.0);
    let tau = if g > 0.0 {
        (vz + (vz * vz + 2.0 * g * h).sqrt()) / g
    } else if vz < 0.0 {
        h / -vz
    } else {
        horizon
    };
    tau.clamp(0.0, horizon)
}

/// Keep the object out of the counter's side faces.
fn counter_side_collision(config: &SceneConfig, next: &mut Frame) {
    let r = config.object_radius;
    let p = next.obj_pos;
    if p.z - r >= config.counter_height - SUPPORT_TOL {
        return;
    }
    let [ex, ey] = config.counter_extent;
    let pen_x = ex + r - p.x.abs();
    let pen_y = ey + r - p.y.abs();
    if pen_x <= 0.0 || pen_y <= 0.0 {
        return;
    }
    let (normal, pen) = if pen_x < pen_y {
        (Vec3::new(p.x.signum(), 0.0, 0.0), pen_x)
    } else {
        (Vec3::new(0.0, p.y.signum(), 0.0), pen_y)
    };
    let vn = next.obj_vel.dot(normal);
    if vn < 0.0 {
        next.obj_pos += normal * pen;
        next.obj_vel -= normal * (vn * (1.0 + config.restitution));
    }
}

/// A non-grasping hand shoves a supported object horizontally.
fn hand_push(config: &SceneConfig, hand: Vec3, hand_vel: Vec3, next: &mut Frame) {
    if !matches!(next.contact, Contact::Counter | Contact::Floor) {
        return;
    }
    let r = config.object_radius;
    let d = next.obj_pos - hand;
    let reach = r + HAND_RADIUS;
    let horizontal = d.xy();
    if d.z.abs() >= r || horizontal.norm() >= reach {
        return;
    }
    let Some(n) = horizontal.normalized() else {
        return;
    };
    let closing = hand_vel.dot(n) - next.obj_vel.dot(n);
    if closing <= 0.0 {
        return;
    }
    next.obj_pos += n * (reach - horizontal.norm());
    next.obj_vel += n * closing;
    next.contact = Contact::Hand;
}

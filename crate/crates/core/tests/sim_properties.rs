//! Simulator invariants: closed-form free fall, energy, quaternion norm,
//! support and determinism.

use proptest::prelude::*;
use trajverb::math::Vec3;
use trajverb::sim::{
    generate_episode, step, write_episode, Contact, Frame, ObjectShape, SceneConfig, ScriptTag, DT, SUPPORT_TOL,
};

const FAR_HAND: Vec3 = Vec3::new(3.0, 3.0, 2.0);

fn scene(shape: ObjectShape, mu: f64, restitution: f64) -> SceneConfig {
    SceneConfig { object_shape: shape, friction_mu: mu, restitution, ..SceneConfig::default() }
}

fn bottom(f: &Frame, s: &SceneConfig) -> f64 {
    f.obj_pos.z - s.object_radius
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// Airborne drops follow z0 + v0 t - g t^2 / 2 for 0.5 s.
    #[test]
    fn free_fall_matches_kinematics(z0 in 2.0f64..3.0, vz in -1.0f64..1.0, vx in -0.5f64..0.5) {
        let s = SceneConfig::default();
        let mut f = Frame::at_rest(FAR_HAND, Vec3::new(1.5, 0.0, z0), Contact::None);
        f.obj_vel = Vec3::new(vx, 0.0, vz);
        for n in 1..=30 {
            f = step(&f, &s, FAR_HAND, false).unwrap();
            let t = n as f64 * DT;
            let z = z0 + vz * t - 0.5 * s.gravity * t * t;
            prop_assert_eq!(f.contact, Contact::None);
            prop_assert!((f.obj_pos.z - z).abs() < 2e-3, "t={} z={} want {}", t, f.obj_pos.z, z);
            prop_assert!((f.obj_pos.x - (1.5 + vx * t)).abs() < 2e-3);
        }
    }

    /// With restitution 0 and the hand out of reach, kinetic plus potential
    /// energy never grows by more than 1e-6 J per step.
    #[test]
    fn energy_never_increases(
        cube in any::<bool>(),
        mu in 0.0f64..1.5,
        x in -0.5f64..0.5,
        height in 0.0f64..0.6,
        v in (-2.0f64..2.0, -2.0f64..2.0, -1.0f64..1.0),
        w in (-8.0f64..8.0, -8.0f64..8.0, -8.0f64..8.0),
    ) {
        let s = scene(if cube { ObjectShape::Cube } else { ObjectShape::Sphere }, mu, 0.0);
        let z = s.counter_height + s.object_radius + height;
        let mut f = Frame::at_rest(FAR_HAND, Vec3::new(x, 0.0, z), Contact::None);
        f.obj_vel = Vec3::new(v.0, v.1, v.2);
        f.obj_angvel = Vec3::new(w.0, w.1, w.2);
        for _ in 0..300 {
            let next = step(&f, &s, FAR_HAND, false).unwrap();
            prop_assert!(next.contact != Contact::Hand);
            let (e0, e1) = (f.energy(&s), next.energy(&s));
            prop_assert!(e1 <= e0 + 1e-6, "t={} energy {} -> {}", next.t_index, e0, e1);
            f = next;
        }
    }

    /// Renormalization keeps |q| within 1e-6 of one while spinning.
    #[test]
    fn quaternion_norm_is_preserved(w in (-20.0f64..20.0, -20.0f64..20.0, -20.0f64..20.0), z in 0.5f64..2.0) {
        let s = SceneConfig::default();
        let mut f = Frame::at_rest(FAR_HAND, Vec3::new(1.5, 0.0, z), Contact::None);
        f.obj_angvel = Vec3::new(w.0, w.1, w.2);
        for _ in 0..90 {
            f = step(&f, &s, FAR_HAND, false).unwrap();
            prop_assert!((f.obj_rot.norm() - 1.0).abs() < 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Generated episodes: time is consecutive, quaternions are unit, and
    /// counter contact means the object rests on the counter top.
    #[test]
    fn generated_episodes_respect_frame_invariants(seed in any::<u64>(), cube in any::<bool>()) {
        let s = scene(if cube { ObjectShape::Cube } else { ObjectShape::Sphere }, 0.3, 0.4);
        let ep = generate_episode(seed, &s).unwrap();
        prop_assert!(ep.len() >= 150 && ep.len() <= 600);
        for (i, f) in ep.frames.iter().enumerate() {
            prop_assert_eq!(f.t_index as usize, i);
            prop_assert!(f.is_finite());
            prop_assert!((f.obj_rot.norm() - 1.0).abs() < 1e-6);
            match f.contact {
                Contact::Counter => prop_assert!((bottom(f, &s) - s.counter_height).abs() <= SUPPORT_TOL),
                Contact::Floor => prop_assert!(bottom(f, &s).abs() <= SUPPORT_TOL),
                _ => {}
            }
        }
    }

    #[test]
    fn generation_is_deterministic(seed in any::<u64>()) {
        let s = SceneConfig::default();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_episode(&generate_episode(seed, &s).unwrap(), &mut a).unwrap();
        write_episode(&generate_episode(seed, &s).unwrap(), &mut b).unwrap();
        prop_assert_eq!(a, b);
    }
}

/// Drop episodes: every airborne stretch after release follows the
/// closed form from its first frame for up to 0.5 s, up to the step in
/// which it bounces.
#[test]
fn drop_segments_match_closed_form() {
    let s = SceneConfig::default();
    let mut checked = 0;
    for seed in 0..400u64 {
        let ep = generate_episode(seed, &s).unwrap();
        if ep.script_tag != ScriptTag::DropFromEdge {
            continue;
        }
        let f = &ep.frames;
        let mut a = 1;
        while a < f.len() {
            if f[a].contact == Contact::None && f[a - 1].contact != Contact::None {
                let mut b = a;
                while b + 1 < f.len() && f[b + 1].contact == Contact::None && b + 1 - a <= 30 {
                    b += 1;
                }
                let (z0, v0) = (f[a].obj_pos.z, f[a].obj_vel.z);
                for (k, fr) in f[a..=b].iter().enumerate() {
                    let t = k as f64 * DT;
                    if (fr.obj_vel.z - (v0 - s.gravity * t)).abs() > 1e-6 {
                        break;
                    }
                    let z = z0 + v0 * t - 0.5 * s.gravity * t * t;
                    assert!((fr.obj_pos.z - z).abs() < 2e-3, "seed {seed} frame {}: {} vs {z}", fr.t_index, fr.obj_pos.z);
                }
                checked += 1;
                a = b + 1;
            } else {
                a += 1;
            }
        }
    }
    assert!(checked >= 10, "only {checked} airborne segments");
}
